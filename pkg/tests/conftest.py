import numpy as np
import pytest

from segrefine import pipeline, retrieval, store, synth


@pytest.fixture(scope="session")
def small_cfg():
    # 8 scenes keeps every fixture under a second while still producing
    # multiple bank entries and eval regions
    return synth.SynthConfig(scene_count=8)


@pytest.fixture(scope="session")
def small_dataset(small_cfg, tmp_path_factory):
    root = tmp_path_factory.mktemp("data")
    manifest = synth.generate_dataset(small_cfg, root)
    return manifest


@pytest.fixture(scope="session")
def small_bank(small_cfg, small_dataset, tmp_path_factory):
    bundles = [store.load_bundle(small_dataset, sid) for sid in small_dataset.bank_split]
    bank = retrieval.build_bank(bundles, small_cfg.patch_size, small_cfg.class_count)
    bank_dir = tmp_path_factory.mktemp("bank")
    retrieval.save_bank(bank, bank_dir)
    return bank, bank_dir


@pytest.fixture(scope="session")
def small_run(small_dataset, small_bank, tmp_path_factory):
    bank, bank_dir = small_bank
    out = tmp_path_factory.mktemp("run")
    cfg = pipeline.PipelineConfig(bank_dir=str(bank_dir), out_dir=str(out))
    result = pipeline.run(small_dataset, bank, cfg, out)
    return result, out, cfg


@pytest.fixture()
def rng():
    return np.random.default_rng(20260821)
