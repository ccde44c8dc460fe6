#include "safemil/mil.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>

using namespace safemil;

namespace {

Trajectory plain_traj(std::vector<std::pair<int, int>> steps) {
    Trajectory t;
    t.steps = std::move(steps);
    return t;
}

/// alpha-mixed unlabeled dataset over two disjoint (s,a) supports:
/// preferred trajectories repeat (0,0), non-preferred repeat (1,1).
TrajectoryDataset synthetic_unlabeled(int n, Scalar alpha, int len) {
    TrajectoryDataset ds;
    ds.role = DatasetRole::Unlabeled;
    ds.alpha = alpha;
    const int n_pref = static_cast<int>(std::llround(alpha * n));
    for (int i = 0; i < n; ++i) {
        const bool preferred = i < n_pref;
        ds.trajectories.push_back(plain_traj(std::vector<std::pair<int, int>>(
            static_cast<std::size_t>(len), preferred ? std::make_pair(0, 0)
                                                     : std::make_pair(1, 1))));
        ds.preferred_provenance.push_back(preferred);
    }
    return ds;
}

TrajectoryDataset synthetic_negative(int n, int len) {
    TrajectoryDataset ds;
    ds.role = DatasetRole::NonPreferred;
    for (int i = 0; i < n; ++i) {
        ds.trajectories.push_back(plain_traj(
            std::vector<std::pair<int, int>>(static_cast<std::size_t>(len), {1, 1})));
        ds.preferred_provenance.push_back(false);
    }
    return ds;
}

}  // namespace

TEST_CASE("lemma1_probability: closed form, boundaries, monotonicity") {
    CHECK(lemma1_probability(0.5, 1) == 0.5);
    CHECK(lemma1_probability(0.25, 8) == doctest::Approx(0.8998870849609375).epsilon(1e-12));
    for (int k : {1, 2, 16, 64}) {
        CHECK(lemma1_probability(0.0, k) == 0.0);
        CHECK(lemma1_probability(1.0, k) == 1.0);
    }
    // monotone in alpha and in K
    Scalar prev = 0.0;
    for (Scalar a : {0.1, 0.2, 0.4, 0.8}) {
        const Scalar p = lemma1_probability(a, 8);
        CHECK(p > prev);
        prev = p;
    }
    prev = 0.0;
    for (int k : {1, 2, 4, 8, 32}) {
        const Scalar p = lemma1_probability(0.2, k);
        CHECK(p > prev);
        prev = p;
    }
    CHECK_THROWS_AS(lemma1_probability(-0.1, 4), ContractError);
    CHECK_THROWS_AS(lemma1_probability(1.1, 4), ContractError);
    CHECK_THROWS_AS(lemma1_probability(0.5, 0), ContractError);
}

TEST_CASE("sample_bag: single-trajectory dataset gives identical segments") {
    TrajectoryDataset ds;
    ds.role = DatasetRole::NonPreferred;
    ds.trajectories = {plain_traj({{0, 0}, {1, 1}, {2, 2}})};
    Rng rng(1);

    const Bag bag = sample_bag(ds, 3, 3, rng);
    CHECK(bag.label == BagLabel::Negative);
    REQUIRE(bag.size() == 3);
    for (const auto& seg : bag.segments) CHECK(seg == ds.trajectories[0].steps);

    // H beyond every trajectory length: segments are whole trajectories
    const Bag big = sample_bag(ds, 2, 50, rng);
    for (const auto& seg : big.segments) CHECK(seg == ds.trajectories[0].steps);
}

TEST_CASE("sample_bag: segment windows stay inside trajectories") {
    TrajectoryDataset ds;
    ds.role = DatasetRole::Unlabeled;
    ds.trajectories = {plain_traj({{0, 0}, {1, 0}, {2, 0}, {3, 0}, {4, 0}}),
                       plain_traj({{5, 1}, {6, 1}})};
    Rng rng(5);
    for (int i = 0; i < 100; ++i) {
        const Bag bag = sample_bag(ds, 4, 3, rng);
        CHECK(bag.label == BagLabel::Unlabeled);
        for (const auto& seg : bag.segments) {
            CHECK(seg.size() <= 3);
            // contiguity within the source: states increase by 1 inside traj 0
            if (seg.front().first <= 4)
                for (std::size_t j = 1; j < seg.size(); ++j)
                    CHECK(seg[j].first == seg[j - 1].first + 1);
        }
    }
}

TEST_CASE("sample_bag: lemma-1 Monte Carlo via provenance tags" * doctest::timeout(60)) {
    const Scalar alpha = 0.25;
    const int bag_size = 8;
    const TrajectoryDataset ds = synthetic_unlabeled(200, alpha, 4);
    Rng rng(77);

    const int n = 20000;
    int with_preferred = 0;
    for (int i = 0; i < n; ++i) {
        const Bag bag = sample_bag(ds, bag_size, 4, rng);
        for (int idx : bag.source_indices)
            if (ds.preferred_provenance[static_cast<std::size_t>(idx)]) {
                ++with_preferred;
                break;
            }
    }
    const Scalar expected = lemma1_probability(alpha, bag_size);
    const Scalar freq = static_cast<Scalar>(with_preferred) / n;
    const Scalar se = std::sqrt(expected * (1.0 - expected) / n);
    CHECK(std::abs(freq - expected) <= 3.0 * se);
}

TEST_CASE("bag_score: zero-parameter model and closed-form values") {
    Mlp model({4 + 2, 8, 1}, OutputHead::SigmoidScalar, 3);
    model.zero_params();  // cost is exactly 0.5 everywhere

    Bag bag;
    bag.label = BagLabel::Unlabeled;
    bag.segments = {{{0, 0}}, {{1, 1}}};  // two single-step segments
    CHECK(bag_score(model, bag, 0.99, 4, 2) == doctest::Approx(0.5).epsilon(1e-15));

    // table route: cost identically 1, K=1, H=3, gamma=0.9 -> 1 + 0.9 + 0.81
    Bag one;
    one.segments = {{{0, 0}, {1, 0}, {2, 1}}};
    const Matrix ones_table = Matrix::Ones(4, 2);
    CHECK(bag_score_table(ones_table, one, 0.9) == doctest::Approx(2.71).epsilon(1e-12));
}

TEST_CASE("bag_score: bit-identical under segment permutations") {
    Mlp model({5 + 3, 16, 1}, OutputHead::SigmoidScalar, 11);
    Rng rng(23);
    for (int trial = 0; trial < 50; ++trial) {
        Bag bag;
        const int k = 1 + rng.uniform_int(6);
        for (int i = 0; i < k; ++i) {
            std::vector<std::pair<int, int>> seg;
            const int len = 1 + rng.uniform_int(4);
            for (int t = 0; t < len; ++t)
                seg.emplace_back(rng.uniform_int(5), rng.uniform_int(3));
            bag.segments.push_back(std::move(seg));
        }
        const Scalar base = bag_score(model, bag, 0.97, 5, 3);
        for (int p = 0; p < 20; ++p) {
            Bag shuffled = bag;
            for (std::size_t i = shuffled.segments.size(); i > 1; --i)
                std::swap(shuffled.segments[i - 1],
                          shuffled.segments[static_cast<std::size_t>(
                              rng.uniform_int(static_cast<int>(i)))]);
            const Scalar permuted = bag_score(model, shuffled, 0.97, 5, 3);
            CHECK(permuted == base);  // exact bit equality
        }
    }
}

TEST_CASE("bag_score: bounded by the sigmoid range") {
    Mlp model({3 + 2, 8, 1}, OutputHead::SigmoidScalar, 9);
    Rng rng(4);
    const Scalar gamma = 0.95;
    const int H = 6;
    Scalar horizon_bound = 0.0;
    for (int t = 0; t < H; ++t) horizon_bound += std::pow(gamma, t);
    for (int trial = 0; trial < 30; ++trial) {
        Bag bag;
        const int k = 1 + rng.uniform_int(5);
        for (int i = 0; i < k; ++i) {
            std::vector<std::pair<int, int>> seg;
            const int len = 1 + rng.uniform_int(H);
            for (int t = 0; t < len; ++t)
                seg.emplace_back(rng.uniform_int(3), rng.uniform_int(2));
            bag.segments.push_back(std::move(seg));
        }
        const Scalar score = bag_score(model, bag, gamma, 3, 2);
        CHECK(score > 0.0);
        CHECK(score < horizon_bound);
    }
}

TEST_CASE("bt_loss: symmetric case, fixed value, limits, gradients") {
    CHECK(bt_loss(2.5, 2.5) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
    CHECK(bt_loss(1.0, 0.0) == doctest::Approx(std::log1p(std::exp(-1.0))).epsilon(1e-15));
    CHECK(bt_loss(1.0, 0.0) == doctest::Approx(0.3132616875).epsilon(1e-9));
    CHECK(bt_loss(50.0, 0.0) < 1e-15);    // score gap -> loss 0
    CHECK(bt_loss(700.0, 0.0) < 1e-300);  // no overflow in the flat tail
    CHECK(bt_loss(0.0, 700.0) == 700.0);  // stable in the other tail

    const auto [gn, gu] = bt_loss_grad(1.0, 0.5);
    CHECK(gn == doctest::Approx(-gu).epsilon(1e-15));
    CHECK(gu > 0.0);
}

TEST_CASE("theorem-1 ordering frequency with ground-truth costs" * doctest::timeout(120)) {
    // every non-preferred trajectory has strictly higher segment cost: the
    // ordering frequency equals the lemma-1 probability exactly
    const Scalar alpha = 0.5;
    const int bag_size = 4;
    const TrajectoryDataset du = synthetic_unlabeled(100, alpha, 5);
    const TrajectoryDataset dn = synthetic_negative(50, 5);

    Matrix truth = Matrix::Zero(2, 2);
    truth(1, 1) = 1.0;  // the non-preferred (s,a) support costs 1, preferred costs 0

    Rng rng(2718);
    const int n = 20000;
    int ordered = 0;
    for (int i = 0; i < n; ++i) {
        const Bag bn = sample_bag(dn, bag_size, 5, rng);
        const Bag bu = sample_bag(du, bag_size, 5, rng);
        if (bag_score_table(truth, bn, 0.99) > bag_score_table(truth, bu, 0.99)) ++ordered;
    }
    const Scalar expected = lemma1_probability(alpha, bag_size);
    const Scalar freq = static_cast<Scalar>(ordered) / n;
    const Scalar se = std::sqrt(expected * (1.0 - expected) / n);
    CHECK(std::abs(freq - expected) <= 3.0 * se);
}

TEST_CASE("cost model: gradient of the bag-ranking loss checks out") {
    const int S = 3, A = 2;
    const TrajectoryDataset du = synthetic_unlabeled(40, 0.5, 4);
    const TrajectoryDataset dn = synthetic_negative(20, 4);

    Rng seeds(31);
    for (int trial = 0; trial < 2; ++trial) {
        const Mlp model({S + A, 12, 1}, OutputHead::SigmoidScalar, seeds.next_u64());
        Rng bag_rng(seeds.next_u64());
        // freeze one batch of bag pairs, then grad-check the mean loss
        std::vector<Bag> neg, unl;
        for (int b = 0; b < 4; ++b) {
            neg.push_back(sample_bag(dn, 3, 3, bag_rng));
            unl.push_back(sample_bag(du, 3, 3, bag_rng));
        }
        const auto loss = [&](const Mlp& m, Vector& grad) {
            Scalar total = 0.0;
            for (std::size_t b = 0; b < neg.size(); ++b) {
                const Scalar sn = bag_score(m, neg[b], 0.99, S, A);
                const Scalar su = bag_score(m, unl[b], 0.99, S, A);
                total += bt_loss(sn, su);
                const auto [gn, gu] = bt_loss_grad(sn, su);
                bag_score_backward(m, neg[b], 0.99, S, A, gn / neg.size(), grad);
                bag_score_backward(m, unl[b], 0.99, S, A, gu / neg.size(), grad);
            }
            return total / neg.size();
        };
        const auto report = grad_check(model, loss, 80, 1e-5, seeds.next_u64());
        CHECK(report.max_rel_error < 1e-4);
    }
}

TEST_CASE("train_cost_model: separates disjoint supports quickly" * doctest::timeout(120)) {
    const int S = 3, A = 2;
    const TrajectoryDataset du = synthetic_unlabeled(60, 0.5, 4);
    const TrajectoryDataset dn = synthetic_negative(30, 4);

    CostModelConfig cfg;
    cfg.gamma = 0.99;
    cfg.bag_size = 8;
    cfg.segment_len = 4;
    cfg.batch_size = 16;
    cfg.steps = 600;
    cfg.learning_rate = 3e-3;
    cfg.seed = 5;
    cfg.hidden = {32, 32};
    cfg.log_interval = 100;

    const TrainedCostModel trained = train_cost_model(dn, du, S, A, cfg);
    CHECK(trained.step_losses.size() == 600);
    CHECK(trained.curve.size() == 6);
    CHECK(trained.step_losses.back() < 0.4);

    const Matrix table = cost_table_from_model(trained.model, S, A);
    CHECK(table(1, 1) > table(0, 0) + 0.1);  // non-preferred support priced higher

    Rng acc_rng(17);
    const Scalar acc = bag_pair_accuracy(trained.model, dn, du, S, A, cfg, 400, acc_rng);
    CHECK(acc >= 0.9);

    // determinism: identical config reproduces identical parameters
    const TrainedCostModel again = train_cost_model(dn, du, S, A, cfg);
    CHECK(again.model.params() == trained.model.params());
}

TEST_CASE("train_cost_model: input validation") {
    const TrajectoryDataset du = synthetic_unlabeled(10, 0.5, 3);
    const TrajectoryDataset dn = synthetic_negative(5, 3);
    CostModelConfig cfg;
    cfg.steps = 1;
    CHECK_THROWS_AS(train_cost_model(du, du, 3, 2, cfg), ContractError);  // wrong role first
    CostModelConfig bad = cfg;
    bad.bag_size = 0;
    CHECK_THROWS_AS(train_cost_model(dn, du, 3, 2, bad), ConfigError);
}
