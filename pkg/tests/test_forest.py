"""MAC-forest storage arithmetic, access-count contracts, tamper detection."""

import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from enclavesim.crypto import keyed_mac8
from enclavesim.forest import (
    MAC_BYTES,
    ForestConfig,
    MacForest,
    forest_storage,
)
from enclavesim.layout import EmulatedDram, MemoryLayout
from enclavesim.timing import CycleStats, LatencyConfig, MeteredDram
from enclavesim.verifier import CatastrophicFailure

MIB = 1 << 20
GIB = 1 << 30
SSK = bytes(range(32, 64))


def leaf_for(page: int, version: int = 0) -> bytes:
    return keyed_mac8(SSK, b"test-leaf", page.to_bytes(8, "big"), version.to_bytes(4, "big"))


class TopStore:
    """Hardware-protected top-MAC table stand-in with access counters."""

    def __init__(self):
        self.macs = {}
        self.reads = 0
        self.writes = 0

    def read(self, region: int) -> bytes:
        self.reads += 1
        return self.macs.get(region, bytes(MAC_BYTES))

    def write(self, region: int, mac: bytes):
        self.writes += 1
        self.macs[region] = mac


def make_forest(total=16 * MIB, config=None):
    config = config or ForestConfig()
    storage = forest_storage(total, config)
    lay = MemoryLayout.build(
        total_size=total, epc_size=MIB, forest_storage_size=storage.dram_region_bytes
    )
    dram = EmulatedDram(lay)
    port = MeteredDram(dram, CycleStats(LatencyConfig()))
    tops = TopStore()
    f = MacForest(
        port,
        base_addr=lay.forest_base,
        n_pages=lay.total_pages,
        ssk_bytes=SSK,
        top_read=tops.read,
        top_write=tops.write,
        config=config,
    )
    tops.macs.update(f.boot_tops)  # the table owner installs boot digests
    return f, dram, tops


# ----------------------------------------------------------------- storage
def test_storage_512gib():
    s = forest_storage(512 * GIB)
    assert s.leaf_bytes == 1 * GIB  # 2^27 pages x 8 B
    assert s.mid_bytes == 64 * MIB  # 2^23 groups x 8 B
    assert s.top_bytes == 8 * MIB  # 2^20 regions x 8 B
    assert s.total_bytes == 1096 * MIB
    assert s.dram_region_bytes == 1088 * MIB


def test_storage_scales_linearly():
    assert forest_storage(16 * MIB).total_bytes * 32768 == forest_storage(512 * GIB).total_bytes


def test_region_pages():
    assert ForestConfig().region_pages == 128


def test_address_helpers():
    f, _, _ = make_forest()
    assert f.leaf_addr(0) == f.leaf_base
    assert f.leaf_addr(1) == f.leaf_base + 8
    assert f.mid_addr(1) == f.mid_base + 8
    assert f.group_of(17) == 1 and f.region_of(17) == 0
    assert f.region_of(128) == 1
    with pytest.raises(ValueError):
        f.leaf_addr(f.n_pages)


def test_config_validation():
    with pytest.raises(ValueError):
        ForestConfig(group_arity=12)  # would straddle DRAM blocks
    with pytest.raises(ValueError):
        ForestConfig(region_arity=0)
    with pytest.raises(ValueError):
        make_forest(config=ForestConfig())[0].__class__(
            port=None, base_addr=0, n_pages=100, ssk_bytes=SSK,
            top_read=None, top_write=None,
        )


# ----------------------------------------------- frozen access-count contract
def warm(f: MacForest, *pages: int):
    """Prime the on-chip region cache; count contracts assume hot regions."""
    for p in pages:
        f.update([(p, leaf_for(p, version=99))])


def test_single_update_costs_six_accesses():
    f, _, _ = make_forest()
    warm(f, 66)  # same region, different leaf group
    res = f.update([(0, leaf_for(0))])
    assert (res.dram_reads, res.dram_writes, res.top_writes, res.top_reads) == (3, 2, 1, 0)
    assert res.total_accesses == 6


def test_cold_region_update_pays_one_top_read():
    # stale-state authentication must fetch the region digest once
    f, _, tops = make_forest()
    res = f.update([(0, leaf_for(0))])
    assert (res.top_reads, res.total_accesses) == (1, 7)
    assert tops.reads == 1


def test_clubbed_same_group_costs_seven():
    # pages 0 and 8 share a leaf group but sit in different 64-byte blocks
    f, _, _ = make_forest()
    warm(f, 66)
    res = f.update([(0, leaf_for(0)), (8, leaf_for(8))])
    assert res.total_accesses == 7


def test_clubbed_same_block_costs_six():
    # adjacent leaves share even the leaf block write
    f, _, _ = make_forest()
    warm(f, 66)
    res = f.update([(0, leaf_for(0)), (1, leaf_for(1))])
    assert res.total_accesses == 6


def test_clubbed_same_region_costs_nine():
    # pages 0 and 127: distinct leaf groups, shared mid group and top
    f, _, _ = make_forest()
    warm(f, 66)
    res = f.update([(0, leaf_for(0)), (127, leaf_for(127))])
    assert res.total_accesses == 9


def test_unclubbed_pair_costs_twelve():
    f, _, _ = make_forest()
    warm(f, 66)
    total = sum(f.update([(p, leaf_for(p))]).total_accesses for p in (0, 127))
    assert total == 12


def test_cross_region_pair_decomposes_to_twelve():
    f, _, _ = make_forest()
    warm(f, 66, 200)
    res = f.update([(0, leaf_for(0)), (128, leaf_for(128))])
    assert res.total_accesses == 12


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 127), st.integers(0, 127))
def test_clubbing_never_beats_region_sharing_bound(p1, p2):
    f, _, _ = make_forest()
    warm(f, (p1 + 64) % 128)
    if p1 == p2:
        p2 = (p2 + 1) % 128
    res = f.update([(p1, leaf_for(p1)), (p2, leaf_for(p2))])
    assert 6 <= res.total_accesses <= 9  # always cheaper than 12 unclubbed


def test_verify_costs_at_most_four():
    f, _, tops = make_forest()
    f.update([(5, leaf_for(5))])
    f._top_cache.clear()
    cold = f.verify_page(5, leaf_for(5))
    assert not cold.top_cache_hit
    assert (cold.dram_reads, cold.top_reads) == (3, 1)
    assert cold.total_accesses == 4
    warm = f.verify_page(5, leaf_for(5))
    assert warm.top_cache_hit and warm.total_accesses == 3


def test_top_cache_lru_evicts_ninth_region():
    f, _, tops = make_forest(total=32 * MIB)  # 64 regions
    for r in range(9):
        f.update([(r * 128, leaf_for(r * 128))])  # updates fill the cache too
    f._top_cache.clear()
    for r in range(9):
        f.verify_page(r * 128, leaf_for(r * 128))
    before = tops.reads
    res = f.verify_page(0, leaf_for(0))  # region 0 was evicted by region 8
    assert res.top_reads == 1 and tops.reads == before + 1
    res = f.verify_page(8 * 128, leaf_for(8 * 128))  # region 8 still resident
    assert res.top_reads == 0


def test_top_cache_disabled_always_reads():
    f, _, tops = make_forest(config=ForestConfig(top_cache_enabled=False))
    f.update([(3, leaf_for(3))])  # update auth pays a top read too
    f.verify_page(3, leaf_for(3))
    f.verify_page(3, leaf_for(3))
    assert tops.reads == 3


# --------------------------------------------------------------- detection
def test_wrong_leaf_rejected():
    f, _, _ = make_forest()
    f.update([(9, leaf_for(9))])
    with pytest.raises(CatastrophicFailure):
        f.verify_page(9, leaf_for(9, version=1))


def test_tampered_sibling_leaf_detected_at_mid():
    f, dram, _ = make_forest()
    f.update([(0, leaf_for(0)), (1, leaf_for(1))])
    dram.poke(f.leaf_addr(1), b"\xff" * 8)  # sibling of page 0
    with pytest.raises(CatastrophicFailure) as e:
        f.verify_page(0, leaf_for(0))
    assert "group digest" in str(e.value)


def test_tampered_mid_detected():
    f, dram, _ = make_forest()
    f.update([(0, leaf_for(0))])
    raw = bytearray(dram.peek(f.mid_addr(0), 8))
    raw[0] ^= 1
    dram.poke(f.mid_addr(0), bytes(raw))
    with pytest.raises(CatastrophicFailure):
        f.verify_page(0, leaf_for(0))


def test_replayed_leaf_mid_pair_detected_at_top():
    f, dram, _ = make_forest(config=ForestConfig(top_cache_enabled=False))
    page = 7
    f.update([(page, leaf_for(page, 1))])
    stale_leaves = dram.peek(*f._leaf_group_span(f.group_of(page)))
    stale_mids = dram.peek(*f._mid_group_span(f.region_of(page)))
    f.update([(page, leaf_for(page, 2))])
    dram.poke(f._leaf_group_span(f.group_of(page))[0], stale_leaves)
    dram.poke(f._mid_group_span(f.region_of(page))[0], stale_mids)
    with pytest.raises(CatastrophicFailure) as e:
        f.verify_page(page, leaf_for(page, 1))  # internally consistent replay
    assert "region digest" in str(e.value)


def test_tampered_top_detected():
    f, _, tops = make_forest(config=ForestConfig(top_cache_enabled=False))
    f.update([(2, leaf_for(2))])
    tops.macs[0] = b"\x00" * 8
    with pytest.raises(CatastrophicFailure):
        f.verify_page(2, leaf_for(2))


def test_update_refuses_to_launder_a_rollback():
    # a consistent (leaf group, mid) rollback must not be folded into a
    # fresh top by a neighbouring update -- that would bless the replay
    f, dram, _ = make_forest(config=ForestConfig(top_cache_enabled=False))
    page = 7
    f.update([(page, leaf_for(page, 1))])
    stale_leaves = dram.peek(*f._leaf_group_span(f.group_of(page)))
    stale_mids = dram.peek(*f._mid_group_span(f.region_of(page)))
    f.update([(page, leaf_for(page, 2))])
    dram.poke(f._leaf_group_span(f.group_of(page))[0], stale_leaves)
    dram.poke(f._mid_group_span(f.region_of(page))[0], stale_mids)
    with pytest.raises(CatastrophicFailure) as e:
        f.update([(40, leaf_for(40))])  # same region, different group
    assert "region digest" in str(e.value)


def test_update_detects_tampered_sibling_leaf():
    f, dram, _ = make_forest()
    f.update([(0, leaf_for(0))])
    dram.poke(f.leaf_addr(1), b"\xee" * 8)
    with pytest.raises(CatastrophicFailure) as e:
        f.update([(2, leaf_for(2))])  # same leaf group as the tamper
    assert "group digest" in str(e.value)


def test_top_cache_shields_against_top_tamper():
    # on-chip cached copy wins over a tampered backing entry
    f, _, tops = make_forest()
    f.update([(2, leaf_for(2))])
    tops.macs[0] = b"\x00" * 8
    assert f.verify_page(2, leaf_for(2)).top_cache_hit


# ------------------------------------------------------------------ oracle
def _oracle_check(f: MacForest, dram: EmulatedDram, tops: TopStore, leaves_ref: dict):
    """Recompute mids and tops from raw DRAM bytes; compare to stored."""
    ga, ra = f.config.group_arity, f.config.region_arity
    touched_groups = {f.group_of(p) for p in f.touched}
    touched_regions = {f.region_of(p) for p in f.touched}
    for page, leaf in leaves_ref.items():
        assert dram.peek(f.leaf_addr(page), MAC_BYTES) == leaf
    for g in touched_groups:
        blob = dram.peek(f.leaf_base + g * ga * MAC_BYTES, ga * MAC_BYTES)
        expect = keyed_mac8(SSK, b"forest-mid", g.to_bytes(8, "big"), blob)
        assert dram.peek(f.mid_addr(g), MAC_BYTES) == expect, f"stale mid {g}"
    for r in touched_regions:
        blob = dram.peek(f.mid_base + r * ra * MAC_BYTES, ra * MAC_BYTES)
        expect = keyed_mac8(SSK, b"forest-top", r.to_bytes(8, "big"), blob)
        assert tops.macs.get(r) == expect, f"stale top {r}"


def test_brute_force_oracle_after_random_ops():
    f, dram, tops = make_forest()
    rng = random.Random(99)
    ref: dict[int, bytes] = {}
    version = 0
    for _ in range(300):
        version += 1
        if ref and rng.random() < 0.4:
            page = rng.choice(sorted(ref))
            res = f.verify_page(page, ref[page])
            assert res.total_accesses <= 4
        elif ref and rng.random() < 0.5:
            pages = rng.sample(sorted(ref), k=min(2, len(ref)))
            ups = [(p, leaf_for(p, version)) for p in pages]
            f.update(ups)
            ref.update({p: l for p, l in ups})
        else:
            page = rng.randrange(f.n_pages)
            leaf = leaf_for(page, version)
            f.update([(page, leaf)])
            ref[page] = leaf
    _oracle_check(f, dram, tops, ref)
    assert f.touched == set(ref)


def test_traffic_reconciles_with_dram_counters():
    f, dram, _ = make_forest()
    stats = f.port.stats
    for p in (0, 8, 200, 4000):
        f.update([(p, leaf_for(p))])
        f.verify_page(p, leaf_for(p))
    from enclavesim.layout import Region

    assert stats.dram_reads["forest"] == dram.reads[Region.FOREST]
    assert stats.dram_writes["forest"] == dram.writes[Region.FOREST]
