#include "acuity/model.hpp"

#include <cmath>
#include <filesystem>

#include "doctest.h"

using namespace acuity;
using namespace acuity::model;

namespace {

struct TestData {
    std::vector<std::vector<ObservationTriplet>> windows;
    std::vector<std::vector<double>> statics;
    std::vector<int> labels;
    std::vector<Sample> samples;
};

TestData make_batch(const ModelConfig& cfg, int n_samples, int max_window, uint64_t seed,
                    bool include_empty = false) {
    TestData d;
    Rng rng(seed);
    for (int i = 0; i < n_samples; ++i) {
        std::vector<ObservationTriplet> w;
        int len = include_empty && i == 0 ? 0 : 1 + int(rng.uniform_int(0, max_window - 1));
        for (int k = 0; k < len; ++k)
            w.push_back({rng.uniform(), int(rng.uniform_int(0, cfg.vocab_size - 1)),
                         rng.normal()});
        d.windows.push_back(std::move(w));
        std::vector<double> s;
        for (int k = 0; k < cfg.static_dim; ++k) s.push_back(rng.normal());
        d.statics.push_back(std::move(s));
        d.labels.push_back(int(rng.uniform_int(0, cfg.num_classes() == 1 ? 1 : 3)));
    }
    for (int i = 0; i < n_samples; ++i)
        d.samples.push_back({&d.windows[size_t(i)], &d.statics[size_t(i)], d.labels[size_t(i)]});
    return d;
}

double batch_loss(const TestData& d, const ModelParams& params, const ModelConfig& cfg,
                  const std::vector<double>& weights, const Matrix* positions) {
    std::vector<PredictionOutput> outs;
    for (const auto& s : d.samples)
        outs.push_back(forward(*s.window, *s.statics, params, cfg, nullptr, positions));
    return loss(outs, d.labels, weights, cfg.head);
}

// max relative error between analytic and central-difference gradients
double gradcheck(const ModelConfig& cfg, uint64_t seed, std::string* worst_name = nullptr) {
    TestData data = make_batch(cfg, 3, 6, seed, true);
    std::vector<double> weights(size_t(cfg.head == HeadKind::FourClass ? 4 : 2), 1.0);
    weights[1] = 1.7;  // non-uniform weights exercise the weighting path

    ModelParams params = init_params(cfg);
    Matrix positions;
    const Matrix* pos = nullptr;
    if (cfg.order_positions) {
        positions = encoding::sinusoid_positions(16, cfg.embed_dim);
        pos = &positions;
    }

    ModelParams grads = params.zeros_like();
    double inv_batch = 1.0 / double(data.samples.size());
    for (const auto& s : data.samples) {
        ForwardCache cache;
        forward(*s.window, *s.statics, params, cfg, &cache, pos);
        backward(cache, params, cfg, s.label,
                 weights[size_t(cfg.head == HeadKind::FourClass ? s.label : s.label)],
                 inv_batch, grads);
    }

    const double eps = 1e-5;
    double worst = 0.0;
    std::vector<Matrix*> param_tensors, grad_tensors;
    std::vector<std::string> names;
    params.for_each_tensor([&](const std::string& name, Matrix& m) {
        param_tensors.push_back(&m);
        names.push_back(name);
    });
    grads.for_each_tensor([&](const std::string&, Matrix& m) { grad_tensors.push_back(&m); });

    for (size_t t = 0; t < param_tensors.size(); ++t) {
        for (size_t i = 0; i < param_tensors[t]->a.size(); ++i) {
            double saved = param_tensors[t]->a[i];
            param_tensors[t]->a[i] = saved + eps;
            double up = batch_loss(data, params, cfg, weights, pos);
            param_tensors[t]->a[i] = saved - eps;
            double down = batch_loss(data, params, cfg, weights, pos);
            param_tensors[t]->a[i] = saved;
            double fd = (up - down) / (2.0 * eps);
            double analytic = grad_tensors[t]->a[i];
            double rel = std::abs(analytic - fd) /
                         std::max({1e-5, std::abs(analytic), std::abs(fd)});
            if (rel > worst) {
                worst = rel;
                if (worst_name) *worst_name = names[t] + "[" + std::to_string(i) + "]";
            }
        }
    }
    return worst;
}

ModelConfig small_config() {
    ModelConfig cfg;
    cfg.embed_dim = 8;
    cfg.layers = 2;
    cfg.heads = 2;
    cfg.ffn_hidden = 12;
    cfg.static_embed = 6;
    cfg.vocab_size = 5;
    cfg.static_dim = 3;
    cfg.seed = 21;
    return cfg;
}

}  // namespace

TEST_CASE("build_mask shapes") {
    SUBCASE("full allows everything") {
        auto m = build_mask(5, AttentionVariant::Full, 0, 0);
        int trues = 0;
        for (auto v : m) trues += v;
        CHECK(trues == 25);
    }
    SUBCASE("window 1 without globals is tridiagonal") {
        auto m = build_mask(5, AttentionVariant::SlidingWindowGlobal, 1, 0);
        for (int i = 0; i < 5; ++i)
            for (int j = 0; j < 5; ++j)
                CHECK(int(m[size_t(i) * 5 + j]) == int(std::abs(i - j) <= 1));
    }
    SUBCASE("window 0 with one global keeps the diagonal plus first row and column") {
        auto m = build_mask(5, AttentionVariant::SlidingWindowGlobal, 0, 1);
        for (int i = 0; i < 5; ++i)
            for (int j = 0; j < 5; ++j)
                CHECK(int(m[size_t(i) * 5 + j]) == int(i == j || i == 0 || j == 0));
    }
    SUBCASE("matches the rule on random shapes and stays symmetric") {
        Rng rng(31);
        for (int trial = 0; trial < 50; ++trial) {
            int n = 1 + int(rng.uniform_int(0, 12));
            int w = int(rng.uniform_int(0, 5));
            int g = int(rng.uniform_int(0, 3));
            auto m = build_mask(n, AttentionVariant::SlidingWindowGlobal, w, g);
            for (int i = 0; i < n; ++i) {
                CHECK(m[size_t(i) * n + i] == 1);  // diagonal always allowed
                for (int j = 0; j < n; ++j) {
                    bool want = std::abs(i - j) <= w || i < g || j < g;
                    CHECK(int(m[size_t(i) * n + j]) == int(want));
                    CHECK(m[size_t(i) * n + j] == m[size_t(j) * n + i]);
                }
            }
        }
    }
}

TEST_CASE("forward produces a valid probability simplex") {
    ModelConfig cfg = small_config();
    auto params = init_params(cfg);
    auto data = make_batch(cfg, 8, 6, 77, true);
    for (const auto& s : data.samples) {
        auto out = forward(*s.window, *s.statics, params, cfg);
        REQUIRE(out.probabilities.size() == 4);
        double sum = 0.0;
        for (double p : out.probabilities) {
            CHECK(p >= 0.0);
            CHECK(p <= 1.0);
            sum += p;
        }
        CHECK(std::abs(sum - 1.0) <= 1e-6);
        CHECK(out.predicted_class ==
              int(std::max_element(out.probabilities.begin(), out.probabilities.end()) -
                  out.probabilities.begin()));
    }
}

TEST_CASE("an empty window runs on the learned stand-in token") {
    ModelConfig cfg = small_config();
    auto params = init_params(cfg);
    std::vector<ObservationTriplet> empty;
    std::vector<double> statics = {0.1, -0.2, 0.3};
    ForwardCache cache;
    auto out = forward(empty, statics, params, cfg, &cache);
    CHECK(cache.used_empty_token);
    CHECK(cache.embed.rows == 1);
    CHECK(out.probabilities.size() == 4);
}

TEST_CASE("sliding window covering the sequence equals full attention") {
    ModelConfig cfg_full = small_config();
    auto params = init_params(cfg_full);
    Rng rng(55);
    for (int trial = 0; trial < 20; ++trial) {
        auto data = make_batch(cfg_full, 1, 8, 1000 + uint64_t(trial));
        int n = int(data.windows[0].size());
        ModelConfig cfg_masked = cfg_full;
        cfg_masked.attention = AttentionVariant::SlidingWindowGlobal;
        cfg_masked.attn_window = std::max(1, n - 1);
        cfg_masked.attn_global = int(rng.uniform_int(0, 2));
        auto full = forward(data.windows[0], data.statics[0], params, cfg_full);
        auto masked = forward(data.windows[0], data.statics[0], params, cfg_masked);
        for (int c = 0; c < 4; ++c)
            CHECK(std::abs(full.probabilities[size_t(c)] -
                           masked.probabilities[size_t(c)]) <= 1e-10);
    }
}

TEST_CASE("masked positions carry exactly zero attention weight") {
    ModelConfig cfg = small_config();
    cfg.attention = AttentionVariant::SlidingWindowGlobal;
    cfg.attn_window = 1;
    cfg.attn_global = 1;
    auto params = init_params(cfg);
    auto data = make_batch(cfg, 1, 8, 91);
    ForwardCache cache;
    forward(data.windows[0], data.statics[0], params, cfg, &cache);
    int n = int(data.windows[0].size());
    for (const auto& layer : cache.layers) {
        for (const auto& head : layer.attn) {
            for (int i = 0; i < n; ++i) {
                double row_sum = 0.0;
                for (int j = 0; j < n; ++j) {
                    bool allowed = std::abs(i - j) <= 1 || i < 1 || j < 1;
                    if (!allowed) CHECK(head(i, j) == 0.0);
                    row_sum += head(i, j);
                }
                CHECK(row_sum == doctest::Approx(1.0).epsilon(1e-9));
            }
        }
    }
}

TEST_CASE("the time-unordered path is permutation invariant") {
    ModelConfig cfg = small_config();
    auto params = init_params(cfg);
    auto data = make_batch(cfg, 1, 8, 131);
    auto base = forward(data.windows[0], data.statics[0], params, cfg);
    Rng rng(17);
    for (int trial = 0; trial < 20; ++trial) {
        auto shuffled = data.windows[0];
        rng.shuffle(shuffled);
        auto out = forward(shuffled, data.statics[0], params, cfg);
        for (int c = 0; c < 4; ++c)
            CHECK(std::abs(out.probabilities[size_t(c)] - base.probabilities[size_t(c)]) <=
                  1e-10);
    }
}

TEST_CASE("order positions break permutation invariance on purpose") {
    ModelConfig cfg = small_config();
    cfg.order_positions = true;
    auto params = init_params(cfg);
    Matrix positions = encoding::sinusoid_positions(16, cfg.embed_dim);
    auto data = make_batch(cfg, 1, 8, 132);
    REQUIRE(data.windows[0].size() >= 2);
    auto base = forward(data.windows[0], data.statics[0], params, cfg, nullptr, &positions);
    auto reversed = data.windows[0];
    std::reverse(reversed.begin(), reversed.end());
    auto out = forward(reversed, data.statics[0], params, cfg, nullptr, &positions);
    double diff = 0.0;
    for (int c = 0; c < 4; ++c)
        diff += std::abs(out.probabilities[size_t(c)] - base.probabilities[size_t(c)]);
    CHECK(diff > 1e-8);
}

TEST_CASE("softmax shift invariance at the classifier") {
    ModelConfig cfg = small_config();
    auto params = init_params(cfg);
    auto data = make_batch(cfg, 1, 6, 133);
    auto base = forward(data.windows[0], data.statics[0], params, cfg);
    for (double& b : params.cls_b.a) b += 3.7;  // same constant on every logit
    auto shifted = forward(data.windows[0], data.statics[0], params, cfg);
    CHECK(shifted.predicted_class == base.predicted_class);
    for (int c = 0; c < 4; ++c)
        CHECK(shifted.probabilities[size_t(c)] ==
              doctest::Approx(base.probabilities[size_t(c)]).epsilon(1e-12));
}

TEST_CASE("loss values") {
    std::vector<double> unit_weights(4, 1.0);
    SUBCASE("a perfect one-hot prediction has zero loss") {
        PredictionOutput p;
        p.probabilities = {0.0, 1.0, 0.0, 0.0};
        CHECK(loss(std::vector<PredictionOutput>{p}, std::vector<int>{1}, unit_weights,
                   HeadKind::FourClass) == 0.0);
    }
    SUBCASE("a uniform prediction costs ln 4") {
        PredictionOutput p;
        p.probabilities = {0.25, 0.25, 0.25, 0.25};
        CHECK(loss(std::vector<PredictionOutput>{p}, std::vector<int>{2}, unit_weights,
                   HeadKind::FourClass) == doctest::Approx(std::log(4.0)).epsilon(1e-12));
    }
    SUBCASE("a hand batch of two matches scalar arithmetic") {
        PredictionOutput a, b;
        a.probabilities = {0.7, 0.1, 0.1, 0.1};
        b.probabilities = {0.05, 0.05, 0.8, 0.1};
        std::vector<double> weights = {2.0, 1.0, 0.5, 1.0};
        double want = (2.0 * -std::log(0.7) + 0.5 * -std::log(0.8)) / 2.0;
        CHECK(loss(std::vector<PredictionOutput>{a, b}, std::vector<int>{0, 2}, weights,
                   HeadKind::FourClass) == doctest::Approx(want).epsilon(1e-12));
    }
    SUBCASE("binary head uses binary cross-entropy") {
        PredictionOutput p;
        p.probabilities = {0.8};
        std::vector<double> w2 = {1.0, 1.0};
        CHECK(loss(std::vector<PredictionOutput>{p}, std::vector<int>{1}, w2,
                   HeadKind::BinaryDelirium) == doctest::Approx(-std::log(0.8)));
        CHECK(loss(std::vector<PredictionOutput>{p}, std::vector<int>{0}, w2,
                   HeadKind::BinaryDelirium) == doctest::Approx(-std::log(0.2)));
    }
}

TEST_CASE("analytic gradients match central finite differences") {
    std::string worst;
    SUBCASE("full attention") {
        double err = gradcheck(small_config(), 2024, &worst);
        CAPTURE(worst);
        CHECK(err < 1e-4);
    }
    SUBCASE("sliding-window attention with order positions") {
        ModelConfig cfg = small_config();
        cfg.attention = AttentionVariant::SlidingWindowGlobal;
        cfg.attn_window = 2;
        cfg.attn_global = 1;
        cfg.order_positions = true;
        double err = gradcheck(cfg, 2025, &worst);
        CAPTURE(worst);
        CHECK(err < 1e-4);
    }
    SUBCASE("binary head") {
        ModelConfig cfg = small_config();
        cfg.head = HeadKind::BinaryDelirium;
        double err = gradcheck(cfg, 2026, &worst);
        CAPTURE(worst);
        CHECK(err < 1e-4);
    }
}

TEST_CASE("with a zero classifier the bias gradient is the mean softmax error") {
    ModelConfig cfg = small_config();
    auto params = init_params(cfg);
    params.cls_w.zero();
    params.cls_b.zero();
    auto data = make_batch(cfg, 4, 5, 41);
    ModelParams grads = params.zeros_like();
    double inv_batch = 1.0 / 4.0;
    for (const auto& s : data.samples) {
        ForwardCache cache;
        forward(*s.window, *s.statics, params, cfg, &cache);
        backward(cache, params, cfg, s.label, 1.0, inv_batch, grads);
    }
    // zero weights give uniform softmax; the bias gradient is (p - onehot)/B
    for (int c = 0; c < 4; ++c) {
        double want = 0.0;
        for (int i = 0; i < 4; ++i) want += (0.25 - (data.labels[size_t(i)] == c ? 1.0 : 0.0));
        want /= 4.0;
        CHECK(grads.cls_b(0, c) == doctest::Approx(want).epsilon(1e-12));
    }
    // nothing flows upstream of a zero classifier
    CHECK(grads.fusion_w.finite());
    double upstream = 0.0;
    for (double v : grads.fusion_w.a) upstream += std::abs(v);
    CHECK(upstream == 0.0);
}

TEST_CASE("doubling a sample's class weight doubles its gradient contribution") {
    ModelConfig cfg = small_config();
    auto params = init_params(cfg);
    auto data = make_batch(cfg, 1, 5, 42);
    ForwardCache cache;
    forward(*data.samples[0].window, *data.samples[0].statics, params, cfg, &cache);
    ModelParams g1 = params.zeros_like();
    ModelParams g2 = params.zeros_like();
    backward(cache, params, cfg, data.labels[0], 1.0, 1.0, g1);
    backward(cache, params, cfg, data.labels[0], 2.0, 1.0, g2);
    std::vector<Matrix*> t1, t2;
    g1.for_each_tensor([&](const std::string&, Matrix& m) { t1.push_back(&m); });
    g2.for_each_tensor([&](const std::string&, Matrix& m) { t2.push_back(&m); });
    for (size_t t = 0; t < t1.size(); ++t)
        for (size_t i = 0; i < t1[t]->a.size(); ++i)
            CHECK(t2[t]->a[i] == doctest::Approx(2.0 * t1[t]->a[i]).epsilon(1e-12));
}

TEST_CASE("training") {
    ModelConfig cfg = small_config();
    TrainConfig tc;
    tc.batch_size = 4;
    tc.learning_rate = 3e-3;
    tc.max_epochs = 150;
    tc.patience = 150;  // run to the end for the overfit check
    tc.seed = 5;

    auto data = make_batch(cfg, 8, 6, 71);
    // make sure at least two classes appear
    data.labels[0] = 0;
    data.labels[1] = 1;
    data.samples.clear();
    for (int i = 0; i < 8; ++i)
        data.samples.push_back({&data.windows[size_t(i)], &data.statics[size_t(i)],
                                data.labels[size_t(i)]});

    SUBCASE("a tiny training set is memorized") {
        auto result = train(data.samples, data.samples, cfg, tc);
        auto preds = predict_batch(data.samples, result.params, cfg, 1);
        int correct = 0;
        for (size_t i = 0; i < preds.size(); ++i)
            correct += preds[i].predicted_class == data.labels[size_t(i)];
        CHECK(correct == 8);
    }
    SUBCASE("the same seed reproduces the run exactly") {
        TrainConfig tc2 = tc;
        tc2.max_epochs = 5;
        auto a = train(data.samples, data.samples, cfg, tc2);
        auto b = train(data.samples, data.samples, cfg, tc2);
        REQUIRE(a.log.size() == b.log.size());
        for (size_t i = 0; i < a.log.size(); ++i) {
            CHECK(a.log[i].train_loss == b.log[i].train_loss);
            CHECK(a.log[i].val_metric == b.log[i].val_metric);
        }
    }
    SUBCASE("thread count does not change the result") {
        TrainConfig tc1 = tc, tc4 = tc;
        tc1.max_epochs = tc4.max_epochs = 4;
        tc1.threads = 1;
        tc4.threads = 4;
        auto a = train(data.samples, data.samples, cfg, tc1);
        auto b = train(data.samples, data.samples, cfg, tc4);
        REQUIRE(a.log.size() == b.log.size());
        for (size_t i = 0; i < a.log.size(); ++i)
            CHECK(a.log[i].train_loss == b.log[i].train_loss);
    }
    SUBCASE("zero learning rate leaves parameters at their initialization") {
        TrainConfig tc0 = tc;
        tc0.learning_rate = 0.0;
        tc0.max_epochs = 3;
        auto result = train(data.samples, data.samples, cfg, tc0);
        auto fresh = init_params(cfg);
        std::vector<Matrix*> got, want;
        result.params.for_each_tensor([&](const std::string&, Matrix& m) { got.push_back(&m); });
        fresh.for_each_tensor([&](const std::string&, Matrix& m) { want.push_back(&m); });
        for (size_t t = 0; t < got.size(); ++t) CHECK(got[t]->a == want[t]->a);
    }
    SUBCASE("an exploding learning rate raises a divergence error") {
        TrainConfig boom = tc;
        boom.learning_rate = 1e18;
        boom.grad_clip = 0.0;
        boom.max_epochs = 50;
        CHECK_THROWS_AS(train(data.samples, data.samples, cfg, boom), DataError);
    }
    SUBCASE("dropout training is deterministic per seed") {
        ModelConfig cfg_drop = cfg;
        cfg_drop.dropout = 0.2;
        TrainConfig tc2 = tc;
        tc2.max_epochs = 3;
        auto a = train(data.samples, data.samples, cfg_drop, tc2);
        auto b = train(data.samples, data.samples, cfg_drop, tc2);
        for (size_t i = 0; i < a.log.size(); ++i)
            CHECK(a.log[i].train_loss == b.log[i].train_loss);
    }
}

TEST_CASE("class weights cap at the configured factor") {
    std::vector<int> labels = {0, 0, 0, 0, 0, 0, 0, 0, 0, 1};
    auto w = class_weights_from_labels(labels, 4, 10.0);
    CHECK(w[0] == doctest::Approx(10.0 / (4.0 * 9.0)));
    CHECK(w[1] == doctest::Approx(10.0 / 4.0));
    auto capped = class_weights_from_labels(labels, 4, 2.0);
    CHECK(capped[1] == 2.0);
    CHECK(w[2] == 1.0);  // absent class keeps a neutral weight
}

TEST_CASE("predict_batch") {
    ModelConfig cfg = small_config();
    auto params = init_params(cfg);
    auto data = make_batch(cfg, 6, 6, 99, true);
    SUBCASE("empty input gives empty output") {
        CHECK(predict_batch({}, params, cfg, 2).empty());
    }
    SUBCASE("batch equals item-wise forward in order") {
        auto batch = predict_batch(data.samples, params, cfg, 3);
        REQUIRE(batch.size() == data.samples.size());
        for (size_t i = 0; i < data.samples.size(); ++i) {
            auto single = forward(*data.samples[i].window, *data.samples[i].statics, params,
                                  cfg);
            CHECK(batch[i].probabilities == single.probabilities);
        }
    }
}

TEST_CASE("checkpoint round trip") {
    ModelConfig cfg = small_config();
    auto params = init_params(cfg);
    auto data = make_batch(cfg, 3, 6, 17);

    namespace fs = std::filesystem;
    fs::path dir = fs::path(ACUITY_TEST_TMP) / "checkpoint";
    fs::create_directories(dir);
    std::string path = (dir / "ck.json").string();

    Checkpoint ck;
    ck.config = cfg;
    ck.params = params;
    ck.seed = 9;
    ck.vocab_hash = "abc123";
    save_checkpoint(path, ck);

    SUBCASE("probabilities survive the round trip") {
        auto loaded = load_checkpoint(path, std::optional<std::string>("abc123"));
        CHECK(loaded.seed == 9);
        for (const auto& s : data.samples) {
            auto a = forward(*s.window, *s.statics, params, cfg);
            auto b = forward(*s.window, *s.statics, loaded.params, loaded.config);
            for (int c = 0; c < 4; ++c)
                CHECK(std::abs(a.probabilities[size_t(c)] - b.probabilities[size_t(c)]) <=
                      1e-12);
        }
    }
    SUBCASE("a vocabulary hash mismatch is refused") {
        CHECK_THROWS_AS(load_checkpoint(path, std::optional<std::string>("different")),
                        DataError);
    }
}
