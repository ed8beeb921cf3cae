#include <doctest.h>

#include <random>
#include <stdexcept>
#include <vector>

#include "mscnn/tensor.hpp"
#include "support/gradcheck.hpp"

using namespace mscnn;

TEST_CASE("factories produce the requested shape and contents") {
    Tensor z = Tensor::zeros({2, 3});
    CHECK(z.shape() == Shape{2, 3});
    CHECK(z.size() == 6);
    for (double v : z.values()) CHECK(v == 0.0);

    Tensor f = Tensor::full({4}, 2.5);
    for (double v : f.values()) CHECK(v == 2.5);

    Tensor d = Tensor::from_data({2, 2}, {1, 2, 3, 4});
    CHECK(d.data()[3] == 4.0);
    CHECK(Tensor::scalar(7.0).item() == 7.0);

    CHECK_THROWS_AS(Tensor::from_data({2, 2}, {1, 2, 3}), std::invalid_argument);
    CHECK_THROWS_AS((void)d.item(), std::invalid_argument);
}

TEST_CASE("randn is reproducible per seed") {
    std::mt19937_64 a(42), b(42), c(43);
    Tensor ta = Tensor::randn({32}, a, 1.0);
    Tensor tb = Tensor::randn({32}, b, 1.0);
    Tensor tc = Tensor::randn({32}, c, 1.0);
    CHECK(ta.values() == tb.values());
    CHECK(ta.values() != tc.values());
}

TEST_CASE("matmul matches a hand-worked product and the identity") {
    Tensor a = Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
    Tensor b = Tensor::from_data({3, 2}, {7, 8, 9, 10, 11, 12});
    Tensor c = matmul(a, b);
    CHECK(c.shape() == Shape{2, 2});
    CHECK(c.values() == std::vector<double>{58, 64, 139, 154});

    Tensor eye = Tensor::zeros({3, 3});
    for (int i = 0; i < 3; ++i) eye.data()[i * 3 + i] = 1.0;
    CHECK(matmul(a, eye).values() == a.values());

    CHECK_THROWS_WITH_AS(matmul(a, a), doctest::Contains("[2,3]"), std::invalid_argument);
}

TEST_CASE("add and mul are elementwise and reject shape mismatches") {
    Tensor a = Tensor::from_data({3}, {1, 2, 3});
    Tensor b = Tensor::from_data({3}, {10, 20, 30});
    CHECK(add(a, b).values() == std::vector<double>{11, 22, 33});
    CHECK(mul(a, b).values() == std::vector<double>{10, 40, 90});
    Tensor wide = Tensor::zeros({4});
    CHECK_THROWS_AS(add(a, wide), std::invalid_argument);
    CHECK_THROWS_AS(mul(a, wide), std::invalid_argument);
}

TEST_CASE("backward of sum gives ones and chain rules compose") {
    Tensor x = Tensor::from_data({4}, {1, -2, 3, 0.5}, /*requires_grad=*/true);

    SUBCASE("sum(x)") {
        Tape tape;
        Tensor loss = sum(x);
        tape.backward(loss);
        CHECK(x.grad() == std::vector<double>{1, 1, 1, 1});
    }
    SUBCASE("sum(x*x) doubles the input") {
        Tape tape;
        Tensor loss = sum(mul(x, x));
        tape.backward(loss);
        CHECK(x.grad() == std::vector<double>{2, -4, 6, 1});
    }
    SUBCASE("diamond reuse accumulates both paths") {
        // d/dx of sum(x*x + x) = 2x + 1
        Tape tape;
        Tensor loss = sum(add(mul(x, x), x));
        tape.backward(loss);
        CHECK(x.grad() == std::vector<double>{3, -3, 7, 2});
    }
}

TEST_CASE("backward requires a scalar loss") {
    Tensor x = Tensor::from_data({2}, {1, 2}, true);
    Tape tape;
    Tensor y = add(x, x);
    CHECK_THROWS_AS(tape.backward(y), std::invalid_argument);
}

TEST_CASE("ops outside a tape or with untracked inputs record nothing") {
    Tensor x = Tensor::from_data({2}, {1, 2}, true);
    Tensor y = add(x, x);  // no active tape
    CHECK_FALSE(y.tracked());
    {
        Tape tape;
        Tensor plain = Tensor::from_data({2}, {3, 4});
        Tensor z = add(plain, plain);
        CHECK_FALSE(z.tracked());
        CHECK(tape.size() == 0);
        Tensor w = add(x, plain);
        CHECK(w.tracked());
        CHECK(tape.size() == 1);
    }
}

TEST_CASE("tapes nest and restore the previous active tape") {
    CHECK(Tape::active() == nullptr);
    Tape outer;
    CHECK(Tape::active() == &outer);
    {
        Tape inner;
        CHECK(Tape::active() == &inner);
    }
    CHECK(Tape::active() == &outer);
}

TEST_CASE("concat lays parts side by side and sums axis extents") {
    Tensor a = Tensor::from_data({2, 2}, {1, 2, 3, 4});
    Tensor b = Tensor::from_data({2, 1}, {5, 6});
    Tensor c = concat({a, b}, 1);
    CHECK(c.shape() == Shape{2, 3});
    CHECK(c.values() == std::vector<double>{1, 2, 5, 3, 4, 6});

    Tensor rows = concat({a, a, b.defined() ? a : a}, 0);
    CHECK(rows.shape() == Shape{6, 2});

    // fusion-sized widths stay exact
    Tensor w1 = Tensor::zeros({1, 1024});
    Tensor w2 = Tensor::zeros({1, 3584});
    Tensor w3 = Tensor::zeros({1, 2560});
    CHECK(concat({w1, w2, w3}, 1).dim(1) == 7168);

    CHECK_THROWS_AS(concat({a, b}, 0), std::invalid_argument);
    CHECK_THROWS_AS(concat({a, b}, 2), std::invalid_argument);
    CHECK_THROWS_AS(concat({}, 0), std::invalid_argument);
}

TEST_CASE("slice extracts a contiguous range and rejects overruns") {
    Tensor a = Tensor::from_data({2, 4}, {1, 2, 3, 4, 5, 6, 7, 8});
    Tensor mid = slice(a, 1, 1, 2);
    CHECK(mid.shape() == Shape{2, 2});
    CHECK(mid.values() == std::vector<double>{2, 3, 6, 7});
    CHECK(slice(a, 0, 1, 1).values() == std::vector<double>{5, 6, 7, 8});
    CHECK_THROWS_AS(slice(a, 1, 3, 2), std::invalid_argument);
    CHECK_THROWS_AS(slice(a, 1, -1, 2), std::invalid_argument);
    CHECK_THROWS_AS(slice(a, 2, 0, 1), std::invalid_argument);
}

TEST_CASE("slicing a concat back apart is the identity") {
    std::mt19937_64 rng(7);
    for (int axis = 0; axis < 2; ++axis) {
        Tensor a = Tensor::randn({3, 4}, rng, 1.0);
        Tensor b = Tensor::randn({3, 4}, rng, 1.0);
        Tensor joined = concat({a, b}, axis);
        CHECK(slice(joined, axis, 0, a.dim(axis)).values() == a.values());
        CHECK(slice(joined, axis, a.dim(axis), b.dim(axis)).values() == b.values());
    }
}

TEST_CASE("gradients route through concat and slice to the right elements") {
    Tensor a = Tensor::from_data({1, 2}, {1, 2}, true);
    Tensor b = Tensor::from_data({1, 3}, {3, 4, 5}, true);
    Tape tape;
    Tensor joined = concat({a, b}, 1);
    Tensor picked = slice(joined, 1, 1, 3);  // a[1], b[0], b[1]
    Tensor weight = Tensor::from_data({1, 3}, {10, 100, 1000});
    Tensor loss = sum(mul(picked, weight));
    tape.backward(loss);
    CHECK(a.grad() == std::vector<double>{0, 10});
    CHECK(b.grad() == std::vector<double>{100, 1000, 0});
}

TEST_CASE("reshape keeps contents and gradients flow through") {
    Tensor a = Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6}, true);
    Tensor r = reshape(a, {3, 2});
    CHECK(r.shape() == Shape{3, 2});
    CHECK(r.values() == a.values());
    CHECK_THROWS_AS(reshape(a, {4, 2}), std::invalid_argument);

    Tape tape;
    Tensor loss = sum(mul(reshape(a, {6}), reshape(a, {6})));
    tape.backward(loss);
    CHECK(a.grad() == std::vector<double>{2, 4, 6, 8, 10, 12});
}

TEST_CASE("tape gradients agree with finite differences") {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        CAPTURE(seed);
        std::mt19937_64 rng(seed);
        Tensor a = Tensor::randn({5, 7}, rng, 1.0);
        Tensor b = Tensor::randn({7, 3}, rng, 1.0);
        Tensor w = Tensor::randn({5, 3}, rng, 1.0);
        auto forward = [&] { return sum(mul(matmul(a, b), w)); };
        auto report = test::gradcheck(forward, {a, b, w}, 1e-5, 1e-6);
        CHECK_MESSAGE(report.ok, report.detail);
    }
}

TEST_CASE("finite differences agree through a slice/concat/reshape chain") {
    for (std::uint64_t seed = 11; seed <= 13; ++seed) {
        CAPTURE(seed);
        std::mt19937_64 rng(seed);
        Tensor x = Tensor::randn({4, 6}, rng, 1.0);
        Tensor y = Tensor::randn({4, 2}, rng, 1.0);
        auto forward = [&] {
            Tensor left = slice(x, 1, 0, 2);
            Tensor right = slice(x, 1, 4, 2);
            Tensor joined = concat({left, mul(right, y)}, 1);
            return sum(mul(reshape(joined, {8, 2}), reshape(joined, {8, 2})));
        };
        auto report = test::gradcheck(forward, {x, y}, 1e-5, 1e-6);
        CHECK_MESSAGE(report.ok, report.detail);
    }
}

TEST_CASE("clone copies data but shares nothing") {
    Tensor a = Tensor::from_data({2}, {1, 2});
    Tensor c = a.clone();
    c.data()[0] = 9;
    CHECK(a.data()[0] == 1.0);
    CHECK(c.id() != a.id());

    Tensor handle = a;  // handle copy aliases the buffer
    handle.data()[0] = 5;
    CHECK(a.data()[0] == 5.0);
}
