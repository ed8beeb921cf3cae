#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "mscnn/checkpoint.hpp"
#include "mscnn/train.hpp"
#include "support/gradcheck.hpp"

using namespace mscnn;

namespace {

// Narrow enough that whole training runs stay in the millisecond range.
NetworkConfig tiny_config(Variant v = Variant::proposed, int classes = 3) {
    NetworkConfig cfg;
    cfg.variant = v;
    cfg.classes = classes;
    auto level = [](int ch, int stride, bool pool, int kernel, int fc) {
        return LevelSpec{ch, stride, pool, kernel, fc};
    };
    cfg.columns[0] = {{level(2, 2, true, 3, 6), level(3, 1, false, 3, 8), level(4, 1, true, 3, 6)}};
    cfg.columns[1] = {{level(2, 1, true, 3, 6), level(3, 1, false, 3, 8), level(4, 2, true, 3, 8)}};
    cfg.columns[2] = {{level(2, 1, true, 3, 6), level(3, 1, false, 3, 8), level(4, 1, true, 3, 8)}};
    cfg.fusion_fc = {10, 12, 10};
    cfg.raw_fc = 8;
    cfg.final_fc = 16;
    cfg.column_fc = {8, 10, 12};
    cfg.dropout = 0.5;
    return cfg;
}

// Class c gets a bright 8x8 block at a class-specific column, plus noise.
Dataset toy_data(int n, int classes, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> noise(0.0, 0.05);
    std::vector<Sample> samples;
    samples.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        Sample s;
        s.width = s.height = 32;
        s.label = i % classes;
        s.pixels.assign(32 * 32, 0.0);
        const int left = 2 + 10 * s.label;
        for (int r = 12; r < 20; ++r)
            for (int c = left; c < left + 8; ++c) s.pixels[static_cast<std::size_t>(r) * 32 + c] = 1.0;
        for (double& v : s.pixels) v += noise(rng);
        s.source = "toy:" + std::to_string(i);
        samples.push_back(std::move(s));
    }
    return pack(samples);
}

Tensor find_state(Network& net, const std::string& name) {
    for (const NamedTensor& nt : net.named_state())
        if (nt.name == name) return nt.tensor;
    FAIL("no state entry named ", name);
    return {};
}

}  // namespace

TEST_CASE("crossentropy matches hand-computed values") {
    // Saturated true-class logit: softmax puts probability 1 there.
    Tensor sure = Tensor::from_data({1, 3}, {1000.0, 0.0, 0.0});
    CHECK(crossentropy(sure, {0}).item() == 0.0);

    // Logits = ln p reproduce the target distribution exactly.
    Tensor skewed =
        Tensor::from_data({1, 3}, {std::log(0.2), std::log(0.7), std::log(0.1)});
    CHECK(crossentropy(skewed, {1}).item() ==
          doctest::Approx(0.35667494393873245).epsilon(1e-12));

    Tensor uniform = Tensor::zeros({1, 10});
    CHECK(crossentropy(uniform, {4}).item() ==
          doctest::Approx(2.302585092994046).epsilon(1e-12));

    // Batch value is the mean of the per-row values.
    Tensor both = Tensor::from_data(
        {2, 3}, {1000.0, 0.0, 0.0, std::log(0.2), std::log(0.7), std::log(0.1)});
    CHECK(crossentropy(both, {0, 1}).item() ==
          doctest::Approx(0.35667494393873245 / 2).epsilon(1e-12));

    // Large shifts cancel inside the log-sum-exp.
    Tensor shifted = Tensor::from_data(
        {1, 3}, {std::log(0.2) + 500, std::log(0.7) + 500, std::log(0.1) + 500});
    CHECK(crossentropy(shifted, {1}).item() ==
          doctest::Approx(0.35667494393873245).epsilon(1e-9));
}

TEST_CASE("crossentropy rejects bad labels and shapes") {
    Tensor logits = Tensor::zeros({2, 3});
    CHECK_THROWS_AS(crossentropy(logits, {0, 3}), std::out_of_range);
    CHECK_THROWS_AS(crossentropy(logits, {-1, 0}), std::out_of_range);
    CHECK_THROWS_AS(crossentropy(logits, {0}), std::invalid_argument);
    CHECK_THROWS_AS(crossentropy(Tensor::zeros({2, 3, 1}), {0, 1}), std::invalid_argument);
}

TEST_CASE("crossentropy is positive away from certainty") {
    std::mt19937_64 rng(3);
    Tensor logits = Tensor::randn({6, 4}, rng, 2.0);
    std::vector<int> labels = {0, 1, 2, 3, 0, 1};
    CHECK(crossentropy(logits, labels).item() > 0.0);
}

TEST_CASE("crossentropy gradient is softmax minus one-hot over batch size") {
    Tensor logits = Tensor::zeros({1, 2}, true);
    Tape tape;
    Tensor loss = crossentropy(logits, {0});
    tape.backward(loss);
    CHECK(logits.grad()[0] == doctest::Approx(-0.5).epsilon(1e-12));
    CHECK(logits.grad()[1] == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("crossentropy scales with the upstream gradient") {
    Tensor logits = Tensor::zeros({1, 2}, true);
    Tensor two = Tensor::from_data({1}, {2.0});
    Tape tape;
    Tensor loss = mul(crossentropy(logits, {0}), two);
    tape.backward(loss);
    CHECK(logits.grad()[0] == doctest::Approx(-1.0).epsilon(1e-12));
    CHECK(logits.grad()[1] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("crossentropy gradient agrees with finite differences") {
    const std::vector<int> labels = {2, 0, 4, 1};
    for (std::uint64_t seed : {1, 2, 3}) {
        std::mt19937_64 rng(seed);
        Tensor logits = Tensor::randn({4, 5}, rng, 1.5);
        auto forward = [&] { return crossentropy(logits, labels); };
        auto report = test::gradcheck(forward, {logits}, 1e-5, 1e-6);
        INFO(report.detail);
        CHECK(report.ok);
    }
}

TEST_CASE("rmsprop reproduces the scalar hand oracle") {
    Tensor w = Tensor::from_data({1}, {1.0}, true);
    w.grad() = {0.5};
    OptimState st;
    rmsprop_step({w}, st, 0.001);
    CHECK(st.avg_sq[0][0] == doctest::Approx(0.025).epsilon(1e-15));
    CHECK(w.data()[0] == doctest::Approx(0.99683772).epsilon(1e-8));
    CHECK(st.steps == 1);
}

TEST_CASE("rmsprop with zero gradient decays the average and keeps the weights") {
    Tensor w = Tensor::from_data({1}, {1.0}, true);
    w.grad() = {0.5};
    OptimState st;
    rmsprop_step({w}, st, 0.001);
    const double w1 = w.data()[0];

    SUBCASE("explicit zero gradient") {
        w.grad() = {0.0};
        rmsprop_step({w}, st, 0.001);
    }
    SUBCASE("missing gradient buffer") {
        w.drop_grad();
        rmsprop_step({w}, st, 0.001);
    }
    CHECK(w.data()[0] == w1);
    CHECK(st.avg_sq[0][0] == doctest::Approx(0.9 * 0.025).epsilon(1e-15));
}

TEST_CASE("rmsprop matches a scalar reference over 100 random steps") {
    const int n = 7;
    std::mt19937_64 rng(11);
    Tensor w = Tensor::randn({n}, rng, 1.0, true);
    std::vector<double> ref_w(w.data(), w.data() + n);
    std::vector<double> ref_e(n, 0.0);

    OptimState st;
    st.beta = 0.9;
    st.eps = 1e-8;
    std::normal_distribution<double> dist(0.0, 1.0);
    for (int step = 0; step < 100; ++step) {
        std::vector<double> g(n);
        for (double& v : g) v = dist(rng);
        w.grad() = g;
        const double lr = 0.01 / (1.0 + 0.01 * step);
        rmsprop_step({w}, st, lr);
        w.drop_grad();
        for (int i = 0; i < n; ++i) {
            ref_e[i] = 0.9 * ref_e[i] + 0.1 * g[i] * g[i];
            ref_w[i] -= lr * g[i] / std::sqrt(ref_e[i] + 1e-8);
        }
    }
    for (int i = 0; i < n; ++i) {
        CHECK(std::abs(w.data()[i] - ref_w[i]) <= 1e-12);
        CHECK(std::abs(st.avg_sq[0][i] - ref_e[i]) <= 1e-12);
    }
    CHECK(st.steps == 100);
}

TEST_CASE("rmsprop moves weights symmetrically for opposite gradients") {
    std::mt19937_64 rng(5);
    std::normal_distribution<double> dist(0.0, 1.0);
    std::vector<double> start(5), g(5);
    for (double& v : start) v = dist(rng);
    for (double& v : g) v = dist(rng);
    std::vector<double> neg = g;
    for (double& v : neg) v = -v;

    Tensor wp = Tensor::from_data({5}, start, true);
    Tensor wm = Tensor::from_data({5}, start, true);
    wp.grad() = g;
    wm.grad() = neg;
    OptimState sp, sm;
    rmsprop_step({wp}, sp, 0.01);
    rmsprop_step({wm}, sm, 0.01);
    for (int i = 0; i < 5; ++i) {
        CHECK(wp.data()[i] - start[i] ==
              doctest::Approx(-(wm.data()[i] - start[i])).epsilon(1e-14));
        CHECK(sp.avg_sq[0][i] == sm.avg_sq[0][i]);
    }
}

TEST_CASE("rmsprop rejects mismatched state shapes") {
    Tensor a = Tensor::from_data({3}, {1.0, 2.0, 3.0}, true);
    OptimState st;
    rmsprop_step({a}, st, 0.01);

    Tensor b = Tensor::zeros({4}, true);
    CHECK_THROWS_AS(rmsprop_step({b}, st, 0.01), std::invalid_argument);
    CHECK_THROWS_AS(rmsprop_step({a, b}, st, 0.01), std::invalid_argument);
}

TEST_CASE("rmsprop skips and reports non-finite gradients") {
    Tensor w = Tensor::from_data({2}, {1.0, 2.0}, true);
    OptimState st;
    w.grad() = {0.5, 0.5};
    rmsprop_step({w}, st, 0.01);
    const std::vector<double> w_before(w.data(), w.data() + 2);
    const std::vector<double> e_before = st.avg_sq[0];

    w.grad() = {std::numeric_limits<double>::infinity(), 0.0};
    std::ostringstream log;
    CHECK(rmsprop_step({w}, st, 0.01, &log) == 1);
    CHECK(std::vector<double>(w.data(), w.data() + 2) == w_before);
    CHECK(st.avg_sq[0] == e_before);
    CHECK(log.str().find("non-finite") != std::string::npos);

    w.grad() = {0.0, std::numeric_limits<double>::quiet_NaN()};
    CHECK(rmsprop_step({w}, st, 0.01, &log) == 1);
    CHECK(std::vector<double>(w.data(), w.data() + 2) == w_before);
}

TEST_CASE("learning rate follows the decayed closed form down to the floor") {
    TrainConfig cfg;
    CHECK(lr_at(cfg, 0) == 0.001);
    CHECK(lr_at(cfg, 1) == doctest::Approx(0.000993).epsilon(1e-15));
    CHECK(lr_at(cfg, 499) > 0.00003);
    CHECK(lr_at(cfg, 500) == 0.00003);  // first clamped epoch
    CHECK(lr_at(cfg, 1000) == 0.00003);

    double prev = std::numeric_limits<double>::infinity();
    for (int e = 0; e <= 1000; ++e) {
        const double lr = lr_at(cfg, e);
        CHECK(lr == std::max(0.001 * std::pow(0.993, e), 0.00003));
        CHECK(lr <= prev);
        CHECK(lr >= 0.00003);
        prev = lr;
    }
    CHECK_THROWS_AS(lr_at(cfg, -1), std::invalid_argument);
}

TEST_CASE("shuffle_indices yields seeded permutations") {
    std::mt19937_64 a(42), b(42);
    const std::vector<int> first = shuffle_indices(50, a);
    CHECK(first == shuffle_indices(50, b));

    std::vector<int> sorted = first;
    std::sort(sorted.begin(), sorted.end());
    std::vector<int> expect(50);
    std::iota(expect.begin(), expect.end(), 0);
    CHECK(sorted == expect);

    // The stream advances, so the next epoch sees a different order.
    CHECK(shuffle_indices(50, a) != first);
}

TEST_CASE("dataset pack and gather move rows intact") {
    Dataset data = toy_data(7, 3, 1);
    CHECK(data.size() == 7);
    CHECK(data.extent() == 32);
    CHECK(data.images.shape() == Shape{7, 1, 32, 32});

    Dataset picked = data.gather({6, 0, 6});
    CHECK(picked.size() == 3);
    CHECK(picked.labels == std::vector<int>{0, 0, 0});
    for (int i = 0; i < 32 * 32; ++i) {
        CHECK(picked.images.data()[i] == data.images.data()[static_cast<std::size_t>(6) * 32 * 32 + i]);
        CHECK(picked.images.data()[static_cast<std::size_t>(1) * 32 * 32 + i] == data.images.data()[i]);
    }
    CHECK_THROWS_AS(data.gather({7}), std::out_of_range);
    CHECK_THROWS_AS(pack({}), std::invalid_argument);

    Sample bad;
    bad.width = 4;
    bad.height = 3;
    bad.pixels.assign(12, 0.0);
    bad.label = 0;
    CHECK_THROWS_AS(pack({bad}), std::invalid_argument);
}

TEST_CASE("evaluate never touches network state") {
    Network net(tiny_config(), 3);
    Dataset data = toy_data(9, 3, 2);

    std::vector<std::vector<double>> before;
    for (const NamedTensor& nt : net.named_state()) before.push_back(nt.tensor.values());

    const EvalResult first = evaluate(net, data, 4);
    const EvalResult second = evaluate(net, data, 4);
    CHECK(first.loss == second.loss);
    CHECK(first.accuracy == second.accuracy);
    CHECK(first.accuracy >= 0.0);
    CHECK(first.accuracy <= 1.0);

    std::size_t i = 0;
    for (const NamedTensor& nt : net.named_state()) CHECK(nt.tensor.values() == before[i++]);

    CHECK_THROWS_AS(evaluate(net, Dataset{}, 4), std::invalid_argument);
}

TEST_CASE("train processes every batch including the short one") {
    Network net(tiny_config(), 4);
    Dataset data = toy_data(11, 3, 3);
    TrainConfig cfg;
    cfg.batch_size = 4;  // 4 + 4 + 3
    cfg.max_epochs = 2;
    cfg.seed = 9;
    const TrainResult r = train(net, data, cfg);
    CHECK(r.epochs_run == 2);
    CHECK(r.steps == 6);
    REQUIRE(r.history.size() == 2);
    CHECK(r.history[0].epoch == 1);
    CHECK(r.history[0].lr == 0.001);
    CHECK(r.history[1].lr == doctest::Approx(0.000993).epsilon(1e-15));
    for (const EpochMetrics& m : r.history) {
        CHECK(std::isfinite(m.train_loss));
        CHECK(m.train_acc >= 0.0);
        CHECK(m.train_acc <= 1.0);
        CHECK(std::isnan(m.val_acc));
    }
    CHECK(r.best_epoch == 0);
}

TEST_CASE("fixed seeds give a bit-identical loss trace") {
    Dataset data = toy_data(10, 2, 4);
    TrainConfig cfg;
    cfg.batch_size = 5;
    cfg.max_epochs = 3;
    cfg.seed = 21;

    Network a(tiny_config(Variant::proposed, 2), 8);
    Network b(tiny_config(Variant::proposed, 2), 8);
    const TrainResult ra = train(a, data, cfg);
    const TrainResult rb = train(b, data, cfg);
    REQUIRE(ra.history.size() == rb.history.size());
    for (std::size_t i = 0; i < ra.history.size(); ++i) {
        CHECK(ra.history[i].train_loss == rb.history[i].train_loss);
        CHECK(ra.history[i].train_acc == rb.history[i].train_acc);
    }
}

TEST_CASE("train rejects empty data and clamps oversized batches") {
    Network net(tiny_config(), 5);
    TrainConfig cfg;
    cfg.max_epochs = 1;
    CHECK_THROWS_AS(train(net, Dataset{}, cfg), std::invalid_argument);

    Dataset data = toy_data(6, 3, 5);
    cfg.batch_size = 100;
    std::ostringstream log;
    TrainOptions opts;
    opts.log = &log;
    const TrainResult r = train(net, data, cfg, opts);
    CHECK(r.steps == 1);
    CHECK(log.str().find("clamped") != std::string::npos);
}

TEST_CASE("train validates its budget") {
    Network net(tiny_config(), 5);
    Dataset data = toy_data(6, 3, 5);
    TrainConfig cfg;
    cfg.decay = 1.0;
    CHECK_THROWS_AS(train(net, data, cfg), std::invalid_argument);
    cfg = TrainConfig{};
    cfg.dropout = 1.0;
    CHECK_THROWS_AS(train(net, data, cfg), std::invalid_argument);
    cfg = TrainConfig{};
    cfg.max_epochs = 0;
    CHECK_THROWS_AS(train(net, data, cfg), std::invalid_argument);
}

TEST_CASE("train stops after twenty epochs without measurable improvement") {
    Network net(tiny_config(), 6);
    Dataset data = toy_data(6, 3, 6);
    TrainConfig cfg;
    // A step size this small freezes the weights, so the loss cannot move.
    cfg.initial_lr = 1e-15;
    cfg.lr_floor = 1e-18;
    cfg.dropout = 0.0;
    cfg.batch_size = 6;
    cfg.max_epochs = 100;
    const TrainResult r = train(net, data, cfg);
    CHECK(r.early_stopped);
    CHECK(r.epochs_run == 21);
    CHECK(r.history.back().epoch == 21);

    // With the stop rule off the same setup runs to the budget.
    Network net2(tiny_config(), 6);
    TrainOptions opts;
    opts.early_stop = false;
    cfg.max_epochs = 25;
    const TrainResult r2 = train(net2, data, cfg, opts);
    CHECK_FALSE(r2.early_stopped);
    CHECK(r2.epochs_run == 25);
}

TEST_CASE("training fits a separable toy problem") {
    Network net(tiny_config(), 7);
    Dataset data = toy_data(30, 3, 7);
    TrainConfig cfg;
    cfg.initial_lr = 0.005;
    cfg.decay = 0.99;
    cfg.dropout = 0.1;
    cfg.batch_size = 10;
    cfg.max_epochs = 30;
    cfg.seed = 13;
    const TrainResult r = train(net, data, cfg);
    REQUIRE(!r.history.empty());
    CHECK(r.history.back().train_loss < 0.5 * r.history.front().train_loss);
    CHECK(evaluate(net, data, 10).accuracy >= 0.9);
}

TEST_CASE("metrics CSV carries one row per epoch") {
    const std::string path = "train_metrics_test.csv";
    std::remove(path.c_str());

    Network net(tiny_config(), 8);
    Dataset data = toy_data(12, 3, 8);
    Dataset val = toy_data(6, 3, 9);
    TrainConfig cfg;
    cfg.batch_size = 6;
    cfg.max_epochs = 3;
    TrainOptions opts;
    opts.val = &val;
    opts.metrics_csv = path;
    train(net, data, cfg, opts);

    std::ifstream in(path);
    REQUIRE(in.good());
    std::string line;
    std::vector<std::string> lines;
    while (std::getline(in, line)) lines.push_back(line);
    in.close();
    REQUIRE(lines.size() == 4);
    CHECK(lines[0] == "epoch,lr,train_loss,train_acc,val_acc");
    CHECK(lines[1].rfind("1,0.001,", 0) == 0);
    for (std::size_t i = 1; i < lines.size(); ++i)
        CHECK(std::count(lines[i].begin(), lines[i].end(), ',') == 4);
    // Fields after the last comma are the validation accuracy.
    CHECK(lines[1].back() != ',');

    // A second run appends rows without a second header.
    Network net2(tiny_config(), 8);
    train(net2, data, cfg, opts);
    std::ifstream again(path);
    lines.clear();
    while (std::getline(again, line)) lines.push_back(line);
    again.close();
    CHECK(lines.size() == 7);
    CHECK(std::count(lines.begin(), lines.end(), std::string("epoch,lr,train_loss,train_acc,val_acc")) == 1);
    std::remove(path.c_str());
}

TEST_CASE("validation tracking lands the checkpoint on the best epoch") {
    const std::string path = "train_best_test.ckpt";
    std::remove(path.c_str());

    Network net(tiny_config(), 10);
    Dataset data = toy_data(18, 3, 10);
    Dataset val = toy_data(9, 3, 11);
    TrainConfig cfg;
    cfg.initial_lr = 0.005;
    cfg.batch_size = 6;
    cfg.max_epochs = 5;
    TrainOptions opts;
    opts.val = &val;
    opts.checkpoint_path = path;
    const TrainResult r = train(net, data, cfg, opts);

    REQUIRE(r.best_epoch >= 1);
    CHECK(r.best_epoch <= r.epochs_run);
    double best = -1.0;
    int first_best = 0;
    for (const EpochMetrics& m : r.history) {
        CHECK_FALSE(std::isnan(m.val_acc));
        if (m.val_acc > best) {
            best = m.val_acc;
            first_best = m.epoch;
        }
    }
    CHECK(r.best_val_acc == best);
    CHECK(r.best_epoch == first_best);

    const LoadedNetwork loaded = load_checkpoint(path);
    CHECK(loaded.epoch == r.best_epoch);
    CHECK(loaded.net.config().variant == Variant::proposed);
    std::remove(path.c_str());
}

TEST_CASE("train installs the budget dropout rate into the network") {
    Network net(tiny_config(), 12);
    CHECK(net.config().dropout == 0.5);
    Dataset data = toy_data(6, 3, 12);
    TrainConfig cfg;
    cfg.dropout = 0.0;
    cfg.batch_size = 6;
    cfg.max_epochs = 1;
    train(net, data, cfg);
    CHECK(net.config().dropout == 0.0);
    CHECK_THROWS_AS(net.set_dropout(1.0), std::invalid_argument);
}

TEST_CASE("kfold_split partitions every dataset") {
    for (auto [n, k] : {std::pair{10, 3}, {7, 5}, {40, 10}, {4000, 10}}) {
        const std::vector<Fold> folds = kfold_split(n, k, 77);
        REQUIRE(static_cast<int>(folds.size()) == k);

        std::vector<int> seen;
        int smallest = n, largest = 0;
        for (const Fold& f : folds) {
            seen.insert(seen.end(), f.val.begin(), f.val.end());
            smallest = std::min(smallest, static_cast<int>(f.val.size()));
            largest = std::max(largest, static_cast<int>(f.val.size()));

            // Within a fold, train and val together cover the dataset.
            std::vector<int> all = f.train;
            all.insert(all.end(), f.val.begin(), f.val.end());
            std::sort(all.begin(), all.end());
            std::vector<int> expect(static_cast<std::size_t>(n));
            std::iota(expect.begin(), expect.end(), 0);
            CHECK(all == expect);
        }
        CHECK(largest - smallest <= 1);

        // Across folds, every row validates exactly once.
        std::sort(seen.begin(), seen.end());
        std::vector<int> expect(static_cast<std::size_t>(n));
        std::iota(expect.begin(), expect.end(), 0);
        CHECK(seen == expect);
    }

    const std::vector<Fold> even = kfold_split(4000, 10, 5);
    for (const Fold& f : even) CHECK(f.val.size() == 400);
}

TEST_CASE("kfold_split is seed-deterministic and validates its inputs") {
    const std::vector<Fold> a = kfold_split(40, 5, 123);
    const std::vector<Fold> b = kfold_split(40, 5, 123);
    for (int i = 0; i < 5; ++i) {
        CHECK(a[i].train == b[i].train);
        CHECK(a[i].val == b[i].val);
    }
    CHECK(kfold_split(40, 5, 124)[0].val != a[0].val);

    CHECK_THROWS_AS(kfold_split(10, 1, 0), std::invalid_argument);
    CHECK_THROWS_AS(kfold_split(10, 11, 0), std::invalid_argument);

    Dataset data = toy_data(10, 2, 13);
    const std::vector<Fold> via_data = kfold_split(data, 5, 123);
    CHECK(via_data.size() == 5);
    CHECK(via_data[0].val.size() == 2);
}

TEST_CASE("epoch replay retrains for exactly the best epoch count") {
    Dataset data = toy_data(20, 2, 14);
    TrainConfig cfg;
    cfg.initial_lr = 0.005;
    cfg.batch_size = 5;
    cfg.max_epochs = 4;
    cfg.seed = 3;
    auto factory = [] { return Network(tiny_config(Variant::proposed, 2), 15); };

    const ReplayResult r = epoch_replay_fit(factory, data, 0.5, cfg);
    CHECK(r.fit_size == 10);
    CHECK(r.val_size == 10);
    REQUIRE(r.best_epoch >= 1);
    CHECK(r.best_epoch <= 4);

    // Phase 1 picked the first epoch of the best validation accuracy.
    double best = -1.0;
    int first_best = 0;
    for (const EpochMetrics& m : r.phase1.history) {
        if (m.val_acc > best) {
            best = m.val_acc;
            first_best = m.epoch;
        }
    }
    CHECK(r.best_epoch == first_best);

    // Phase 2 ran on the full set for that exact count, without validation.
    CHECK(r.phase2.epochs_run == r.best_epoch);
    CHECK_FALSE(r.phase2.early_stopped);
    for (const EpochMetrics& m : r.phase2.history) CHECK(std::isnan(m.val_acc));
}

TEST_CASE("epoch replay rejects degenerate splits") {
    Dataset data = toy_data(20, 2, 16);
    TrainConfig cfg;
    cfg.max_epochs = 1;
    auto factory = [] { return Network(tiny_config(Variant::proposed, 2), 17); };
    CHECK_THROWS_AS(epoch_replay_fit(factory, data, 0.0, cfg), std::invalid_argument);
    CHECK_THROWS_AS(epoch_replay_fit(factory, data, 1.0, cfg), std::invalid_argument);
    CHECK_THROWS_AS(epoch_replay_fit(factory, data, 0.01, cfg), std::invalid_argument);
    CHECK_THROWS_AS(epoch_replay_fit(factory, data, 0.99, cfg), std::invalid_argument);

    Dataset val = toy_data(4, 2, 16);
    TrainOptions opts;
    opts.val = &val;
    CHECK_THROWS_AS(epoch_replay_fit(factory, data, 0.5, cfg, opts), std::invalid_argument);
}

TEST_CASE("frozen convolutions receive exactly zero gradient") {
    Network net(tiny_config(), 18);
    Dataset data = toy_data(6, 3, 18);
    net.freeze_convs(true);

    std::mt19937_64 rng(1);
    Tape tape;
    FeatureBundle fb = net.forward(data.images, Mode::train, &rng);
    Tensor loss = crossentropy(fb.logits, data.labels);
    tape.backward(loss);

    CHECK_FALSE(find_state(net, "col1.lvl1.conv.weight").has_grad());
    CHECK_FALSE(find_state(net, "col3.lvl3.conv.bn.gamma").has_grad());
    CHECK(find_state(net, "final.weight").has_grad());
    CHECK(find_state(net, "col1.lvl3.local.weight").has_grad());
    net.freeze_convs(false);
}

TEST_CASE("separate column training keeps the lowest-validation-loss weights") {
    Network net(tiny_config(), 19);
    Dataset data = toy_data(12, 3, 19);
    Dataset val = toy_data(9, 3, 20);
    TrainConfig cfg;
    cfg.initial_lr = 0.005;
    cfg.batch_size = 6;
    cfg.max_epochs = 4;
    cfg.seed = 23;
    TrainOptions opts;
    opts.val = &val;

    std::vector<std::string> names_before;
    for (const NamedTensor& nt : net.named_state()) names_before.push_back(nt.name);

    const TrainResult r = train_columns_separately(net, data, cfg, opts);
    CHECK_FALSE(net.convs_frozen());
    REQUIRE(!r.history.empty());

    // The temporary per-column heads never enter the network state.
    std::vector<std::string> names_after;
    for (const NamedTensor& nt : net.named_state()) names_after.push_back(nt.name);
    CHECK(names_after == names_before);

    // The returned weights evaluate to the best validation loss seen.
    double min_loss = std::numeric_limits<double>::infinity();
    for (const EpochMetrics& m : r.history) {
        CHECK_FALSE(std::isnan(m.val_loss));
        min_loss = std::min(min_loss, m.val_loss);
    }
    CHECK(evaluate(net, val, cfg.batch_size).loss == min_loss);
}

TEST_CASE("separate column training requires the proposed variant") {
    Network net(tiny_config(Variant::baseline1), 24);
    Dataset data = toy_data(6, 3, 24);
    TrainConfig cfg;
    cfg.max_epochs = 1;
    CHECK_THROWS_AS(train_columns_separately(net, data, cfg), std::invalid_argument);
}
