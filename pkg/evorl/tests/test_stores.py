from evorl.stores import checkpoint_store, json_store, artifact_store, is_incomplete


def test_checkpoints_are_keyed_by_generation(tmp_path):
    store = checkpoint_store(str(tmp_path / 'checkpoints'))
    store[12] = {'generation': 12, 'population': []}
    store[3] = {'generation': 3, 'population': []}
    files = artifact_store(str(tmp_path / 'checkpoints'))
    files['notes.txt'] = 'not a checkpoint'
    assert sorted(store) == [3, 12]
    assert max(store) == 12 and store[12]['generation'] == 12
    assert sorted(files) == ['gen_0003.json', 'gen_0012.json', 'notes.txt']


def test_json_store_is_canonical(tmp_path):
    store = json_store(str(tmp_path))
    store['a.json'] = {'b': 1, 'a': [1.5, None]}
    artifact_store(str(tmp_path))['readme.txt'] = 'hello'
    assert list(store) == ['a.json']
    assert store['a.json'] == {'a': [1.5, None], 'b': 1}
    assert not is_incomplete(str(tmp_path))
