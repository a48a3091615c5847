from didbvit.model import ModelConfig
from didbvit.opcount import count


def test_toy_config_by_hand():
    # N = 16 tokens, c = 64, MLP ratio 4, two blocks
    n, c = 16, 64
    bops_block = 4 * n * c * c + 2 * n * n * c + 8 * n * c * c + 9 * n * c
    flops = n * 192 * c + c * 10 + 2 * (n * c + 8 * n * c)
    oc = count(ModelConfig())
    assert (oc.bops, oc.flops) == (2 * bops_block, flops) == (1656832, 215680)
    assert oc.ops == 1656832 / 64 + 215680 == 241568


def test_variants_drop_their_terms():
    base = count(ModelConfig(use_diba=False, use_hfsc=False, use_irprelu=False))
    full = count(ModelConfig())
    assert full.bops - base.bops == 2 * 9 * 16 * 64
    assert full.flops - base.flops == 2 * 9 * 16 * 64
