import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from _reference import gallery_particle_estimate, tcm_histories, tcm_posterior_profile
from predprofile.core import predict_test
from predprofile.envs import make_env
from predprofile.envs import ballbounce as bb
from predprofile.envs import gallery as g
from predprofile.envs import threecard as tc
from predprofile.envs.markov import MarkovMdp
from predprofile.errors import ConfigError, ConsistencyError, MalformedHistoryError

# ---------------------------------------------------------------- Three Card Monte


def test_fresh_counts_give_point_three_per_pair():
    assert np.allclose(tc.swap_distribution((0, 0, 0)), [0.3, 0.3, 0.3, 0.1], atol=1e-15)


def test_least_swapped_pair_gets_half_the_mass():
    # pair 13 and 23 tied for least: 0.25 each; pair 12 gets the 0.4
    assert np.allclose(tc.swap_distribution((2, 1, 1)), [0.4, 0.25, 0.25, 0.1], atol=1e-15)
    assert np.allclose(tc.swap_distribution((0, 3, 1)), [0.5, 0.2, 0.2, 0.1], atol=1e-15)


@pytest.mark.parametrize("counts", [(0, 0, 0), (0, 2, 1)])
def test_swap_frequencies_over_a_million_draws(counts):
    rng = np.random.default_rng(11)
    state = tc.TcmState(ace=1, counts=counts, phase=tc.MIXING)
    n = 1_000_000
    tally = np.zeros(4)
    slot = {tc.SWAP12: 0, tc.SWAP13: 1, tc.SWAP23: 2, tc.GUESS: 3}
    for _ in range(n):
        _, res = tc.tcm_step(state, tc.WATCH, rng)
        tally[slot[res.obs]] += 1
    p = tc.swap_distribution(counts)
    sd = np.sqrt(p * (1 - p) / n)
    assert np.all(np.abs(tally / n - p) < 5 * sd)


def test_guess_flip_on_ace_pays_and_resets():
    s = tc.TcmState(ace=3, counts=(2, 0, 1), phase=tc.GUESS_PROMPTED)
    nxt, res = tc.tcm_step(s, tc.FLIP3, np.random.default_rng(0))
    assert res.reward == 1.0 and res.obs == tc.ACE
    assert nxt == tc.INITIAL_STATE


def test_guess_watch_forfeits():
    s = tc.TcmState(ace=1, phase=tc.GUESS_PROMPTED)
    nxt, res = tc.tcm_step(s, tc.WATCH, np.random.default_rng(0))
    assert (res.reward, res.obs, nxt) == (-1.0, tc.FORFEIT, tc.INITIAL_STATE)


def test_mixing_flip_costs_one_and_keeps_state():
    s = tc.TcmState(ace=1, counts=(1, 0, 0), phase=tc.MIXING)
    nxt, res = tc.tcm_step(s, tc.FLIP1, np.random.default_rng(0))
    assert (res.obs, res.reward, nxt) == (tc.ACE, -1.0, s)


def test_oracle_examples():
    deal = (tc.WATCH, tc.POS2)
    assert tc.tcm_oracle((deal,)).tolist() == [0, 1, 0]
    assert tc.tcm_oracle((deal, (tc.WATCH, tc.SWAP12))).tolist() == [1, 0, 0]
    assert tc.tcm_oracle((deal, (tc.WATCH, tc.SWAP12), (tc.WATCH, tc.SWAP13))).tolist() == [0, 0, 1]


def test_oracle_rejects_impossible_history():
    with pytest.raises(MalformedHistoryError):
        tc.tcm_oracle(((tc.WATCH, tc.POS1),))
    with pytest.raises(MalformedHistoryError):
        tc.tcm_oracle(((tc.WATCH, tc.POS2), (tc.FLIP1, tc.ACE)))


def test_oracle_matches_brute_force_posterior_to_depth_four():
    for h in tcm_histories(4):
        assert np.array_equal(tc.tcm_oracle(h), tcm_posterior_profile(h))


def test_generative_oracle_agrees_with_tracker():
    oracle = tc.TcmOracle()
    for h in tcm_histories(3):
        p = np.array([predict_test(oracle, h, t) for t in tc.TESTS])
        assert np.allclose(p, tc.tcm_oracle(h), atol=1e-15)


@settings(max_examples=50, deadline=None)
@given(st.sampled_from(tc.SWAP_OBS), st.lists(st.sampled_from(tc.SWAP_OBS), max_size=6))
def test_swap_twice_is_identity(swap, prefix):
    h = ((tc.WATCH, tc.POS2),) + tuple((tc.WATCH, o) for o in prefix)
    before = tc.tcm_oracle(h)
    after = tc.tcm_oracle(h + ((tc.WATCH, swap), (tc.WATCH, swap)))
    assert np.array_equal(before, after)


def test_simulated_profiles_are_three_one_hots():
    env = make_env("threecard", np.random.default_rng(2))
    tr = env.tracker()
    rng = np.random.default_rng(3)
    seen = set()
    for _ in range(5000):
        a = int(rng.integers(4))
        tr.observe(a, env.step(a).obs)
        seen.add(tuple(tr.profile()))
    assert seen == {(1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.0, 0.0, 1.0)}


def test_expert_policy_prompt_and_mixing():
    env = make_env("threecard")
    tr = env.tracker()
    tr.state = tc.TcmState(ace=1, phase=tc.GUESS_PROMPTED)
    assert env.expert_action(tr) == tc.FLIP1
    tr.state = tc.TcmState(ace=1, phase=tc.MIXING)
    assert env.expert_action(tr) == tc.WATCH


# ---------------------------------------------------------------- Shooting Gallery

def _free(_r, _c):
    return False


def _walls(r, c):
    return not (0 <= r < g.SIZE and 0 <= c < g.SIZE)


def test_unobstructed_move():
    assert g.resolve_bounce((3, 3), (1, 1), _walls) == ((4, 4), (1, 1))


def test_top_row_reflects_vertical_component():
    assert g.resolve_bounce((0, 3), (-1, 1), _walls) == ((1, 4), (1, 1))


def test_corner_flips_both_components():
    assert g.resolve_bounce((0, 0), (-1, -1), _walls) == ((1, 1), (1, 1))
    assert g.resolve_bounce((7, 7), (1, 1), _walls) == ((6, 6), (-1, -1))


def test_diagonal_only_block_flips_both():
    blocked = lambda r, c: (r, c) == (4, 4) or _walls(r, c)
    assert g.resolve_bounce((3, 3), (1, 1), blocked) == ((2, 2), (-1, -1))


def test_enclosed_target_stays():
    blocked = lambda r, c: (r, c) != (3, 3)
    assert g.resolve_bounce((3, 3), (1, -1), blocked) == ((3, 3), (1, -1))


def test_target_inside_obstacle_is_an_error():
    with pytest.raises(ConsistencyError):
        g.resolve_bounce((2, 2), (1, 1), lambda r, c: True)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, (1 << 16) - 1), st.integers(0, 63), st.integers(0, 3))
def test_bounce_lands_on_free_cell(mask, p, d):
    r, c = divmod(p, g.SIZE)
    if g.mask_blocked(mask, r, c):
        return
    q, nd = g.bounce_table(mask)[p][d]
    assert not g.mask_blocked(mask, *divmod(q, g.SIZE))
    assert q != p or all(g.mask_blocked(mask, r + dr, c + dc) for dr, dc in g.DIRS)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, (1 << 16) - 1), st.integers(0, 63))
def test_local_pattern_reproduces_full_bounce(mask, p):
    if g.mask_blocked(mask, *divmod(p, g.SIZE)):
        return
    assert g.pattern_bounce(p, g.neighbour_pattern(mask, p)) == g.bounce_table(mask)[p]


def test_far_obstacle_does_not_change_abstract_observation():
    p = g.cell(1, 1)
    near = 0
    far = 1 << g.block_of(6, 6)
    a = g.gallery_abstract(g.encode(False, near, p))
    b = g.gallery_abstract(g.encode(False, far, p))
    assert a == b


def test_corner_pattern_marks_boundary_blocked():
    _, _, pattern = g.abstract_key(g.gallery_abstract(g.encode(False, 0, g.cell(0, 0))))
    outside = [k for k, (dr, dc) in enumerate(g.NEIGHBOURS) if dr < 0 or dc < 0]
    assert all(pattern >> k & 1 for k in outside)
    assert not any(pattern >> k & 1 for k in range(8) if k not in outside)


def test_reset_observation_has_its_own_symbols():
    code = g.encode(True, 0, g.cell(2, 5))
    reset, p, _ = g.abstract_key(g.gallery_abstract(code))
    assert reset == 1 and p == g.cell(2, 5)


def _tracker_at(pos, support, pattern=0):
    tr = g.GalleryTracker()
    tr.pending = False
    tr.pos, tr.pattern, tr.support = pos, pattern, support
    return tr


def test_oracle_value_target_on_crosshairs():
    # no direction leads back onto the crosshairs in open space
    tr = _tracker_at(g.cell(4, 4), (0, 1, 2, 3))
    assert tr.prediction() == pytest.approx(0.99 * 0.3, abs=1e-15)


def test_oracle_value_adjacent_heading_in():
    tr = _tracker_at(g.cell(3, 3), (3,))  # direction (+1, +1)
    assert tr.prediction() == pytest.approx(0.99 * 0.7, abs=1e-15)


def test_oracle_value_far_away():
    tr = _tracker_at(g.cell(0, 7), (0, 1, 2, 3))
    assert tr.prediction() == 0.0


def test_shot_on_crosshairs_pays_only_on_stick():
    params = g.GalleryParams()
    state = g.GalleryState(0, params.x_cell, 0, False)
    rng = np.random.default_rng(5)
    n = 200_000
    wins = sum(g.gallery_step(state, g.SHOOT, rng, params)[1].reward == 10.0 for _ in range(n))
    assert abs(wins / n - 0.99 * 0.3) < 5 * np.sqrt(0.297 * 0.703 / n)


def test_shot_far_away_always_loses():
    state = g.GalleryState(0, g.cell(0, 0), 3, False)
    rng = np.random.default_rng(6)
    assert all(g.gallery_step(state, g.SHOOT, rng)[1].reward == -5.0 for _ in range(2000))


def test_watch_never_rewarded():
    env = make_env("gallery", np.random.default_rng(1))
    assert all(env.step(g.WATCH).reward == 0.0 for _ in range(3000))


def test_reset_never_places_target_on_crosshairs():
    rng = np.random.default_rng(4)
    params = g.GalleryParams()
    for _ in range(3000):
        s = g.draw_reset(rng, params)
        assert s.pos != params.x_cell
        assert not g.mask_blocked(s.mask, *params.crosshairs)


def test_bad_crosshairs_rejected():
    with pytest.raises(ConfigError):
        g.GalleryParams(crosshairs=(8, 0))


def _rollout(seed, steps):
    env = make_env("gallery", np.random.default_rng(seed))
    rng = np.random.default_rng(seed + 1000)
    full = []
    for _ in range(steps):
        a = int(rng.integers(2))
        full.append((a, env.step(a).obs))
    return full, [(a, g.gallery_abstract(o)) for a, o in full]


def test_oracle_matches_particle_estimate_on_sample_histories():
    rng = np.random.default_rng(9)
    for seed in range(8):
        full, abstract = _rollout(seed, 3 + seed)
        exact = g.gallery_oracle(abstract)[0]
        assert abs(exact - gallery_particle_estimate(full, 40_000, rng)) < 0.015


def test_abstract_profiles_equal_full_profiles():
    oracle = g.GalleryOracle()
    for seed in range(6):
        full, abstract = _rollout(seed, 5)
        assert predict_test(oracle, tuple(full), oracle.tabs.full_test()) == pytest.approx(
            g.gallery_oracle(abstract)[0], abs=1e-12)


def test_direction_belief_stays_uniform_along_rollouts():
    for seed in range(20):
        _, abstract = _rollout(seed, 60)
        g.gallery_oracle(abstract)  # raises on a non-uniform belief


# ---------------------------------------------------------------- Ball Bounce

def _bb_history(n, k=10, x=5):
    state = bb.BallBounceState(k)
    h = []
    for _ in range(n):
        state, pos = bb.bb_step(state)
        h.append((bb.STEP, bb.bb_abstract(pos, x)))
    return h, state


def test_ball_walks_and_reflects():
    s = bb.BallBounceState(4)
    seen = []
    for _ in range(7):
        s, pos = bb.bb_step(s)
        seen.append(pos)
    assert seen == [1, 2, 3, 2, 1, 0, 1]


def test_ball_left_of_window_moving_right_predicts_one():
    h, state = _bb_history(4)  # ball at 4, heading right
    assert (state.pos, state.dir) == (4, 1)
    assert bb.bb_oracle(h, 5)[0] == 1.0


def test_ball_left_of_window_moving_left_predicts_zero():
    h, state = _bb_history(12)  # 0..9 then back to 6, 5, 4
    assert (state.pos, state.dir) == (6, -1)
    h, state = _bb_history(14)
    assert (state.pos, state.dir) == (4, -1)
    assert bb.bb_oracle(h, 5)[0] == 0.0


def test_ball_outside_window_predicts_zero():
    h, _ = _bb_history(1)
    assert bb.bb_oracle(h, 5)[0] == 0.0


def test_ball_profiles_are_exactly_two():
    h, _ = _bb_history(60)
    vals = {float(bb.bb_oracle(h[:n], 5)[0]) for n in range(61)}
    assert vals == {0.0, 1.0}


def test_window_centre_out_of_range():
    with pytest.raises(ConfigError):
        bb.BallBounce(k=10, x=0)


def test_ball_bounce_pomdp_reproduces_walk():
    from predprofile.pomdp import likelihood

    model = bb.ball_bounce_pomdp(6)
    model.validate()
    walk = []
    s = bb.BallBounceState(6)
    for _ in range(20):
        s, pos = bb.bb_step(s)
        walk.append((0, pos))
    assert likelihood(model, walk) == pytest.approx(0.0, abs=1e-12)


# ---------------------------------------------------------------- Markov MDP

def test_markov_rows_normalised():
    mdp = MarkovMdp(seed=1)
    assert np.allclose(mdp.P.sum(axis=-1), 1.0)
    assert set(mdp.next_obs_dist((), 0)) <= set(range(5))
