"""Data files shipped with evorl"""
