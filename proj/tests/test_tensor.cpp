#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "coordatt/tensor.hpp"

#include <cmath>
#include <stdexcept>

using namespace coordatt;

TEST_CASE("tensor construction and shape algebra") {
    Tensor t({2, 3}, 1.5);
    CHECK(t.rank() == 2);
    CHECK(t.numel() == 6);
    CHECK(t.extent(0) == 2);
    CHECK(t.extent(1) == 3);
    for (double v : t.data) CHECK(v == 1.5);
    CHECK(!t.grad.has_value());

    Tensor u({1, 2, 2, 2}, std::vector<double>{1, 2, 3, 4, 5, 6, 7, 8});
    CHECK(u.at(0, 1, 1, 0) == 7.0);
    u.at(0, 0, 0, 1) = -3.0;
    CHECK(u.data[1] == -3.0);

    CHECK(Tensor::zeros({3}).data == std::vector<double>{0, 0, 0});
    CHECK(Tensor::full({2}, 4.0).data == std::vector<double>{4, 4});
    CHECK(shape_to_string({1, 4, 5, 6}) == "[1,4,5,6]");
    CHECK(shape_numel({2, 3, 4}) == 24);
}

TEST_CASE("tensor constructor rejects bad shapes") {
    CHECK_THROWS_AS(Tensor(std::vector<int>{}), std::runtime_error);
    CHECK_THROWS_AS(Tensor({1, 2, 3, 4, 5}), std::runtime_error);
    CHECK_THROWS_AS(Tensor({2, 0}), std::runtime_error);
    CHECK_THROWS_AS(Tensor({2, 2}, std::vector<double>{1, 2, 3}), std::runtime_error);
    CHECK_THROWS_AS(Tensor({2}).extent(1), std::runtime_error);
}

TEST_CASE("rng streams are deterministic and seed-sensitive") {
    Rng a(42), b(42), c(43);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
    Tensor ta = Rng(7).uniform_tensor({2, 3, 4, 5}, -2.0, 2.0);
    Tensor tb = Rng(7).uniform_tensor({2, 3, 4, 5}, -2.0, 2.0);
    CHECK(ta.data == tb.data);
    CHECK(Rng(7).next_u64() != c.next_u64());

    Rng r(1);
    for (int i = 0; i < 1000; ++i) {
        double v = r.uniform(-1.0, 3.0);
        CHECK(v >= -1.0);
        CHECK(v < 3.0);
        int k = r.uniform_int(2, 5);
        CHECK(k >= 2);
        CHECK(k <= 5);
    }
}

TEST_CASE("concat_spatial places the transposed h-map first") {
    Tensor a({1, 2, 3, 1}, 0.0), b({1, 2, 1, 4}, 0.0);
    CHECK(concat_spatial(a, b).shape == std::vector<int>{1, 2, 1, 7});

    Tensor ones({1, 1, 2, 1}, 1.0), twos({1, 1, 1, 2}, 2.0);
    CHECK(concat_spatial(ones, twos).data == std::vector<double>{1, 1, 2, 2});
}

TEST_CASE("concat_spatial rejects mismatched inputs") {
    Tensor a({1, 2, 3, 1}, 0.0);
    CHECK_THROWS_AS(concat_spatial(a, Tensor({1, 3, 1, 4}, 0.0)), std::runtime_error);
    CHECK_THROWS_AS(concat_spatial(a, Tensor({2, 2, 1, 4}, 0.0)), std::runtime_error);
    CHECK_THROWS_AS(concat_spatial(a, Tensor({1, 2, 2, 4}, 0.0)), std::runtime_error);
    CHECK_THROWS_AS(concat_spatial(Tensor({1, 2}, 0.0), a), std::runtime_error);
}

TEST_CASE("split_spatial shapes and bounds") {
    Tensor f({1, 4, 1, 7}, 0.5);
    auto [fh, fw] = split_spatial(f, 3);
    CHECK(fh.shape == std::vector<int>{1, 4, 3, 1});
    CHECK(fw.shape == std::vector<int>{1, 4, 1, 4});
    CHECK_THROWS_AS(split_spatial(f, 7), std::runtime_error);
    CHECK_THROWS_AS(split_spatial(f, 0), std::runtime_error);
    CHECK_THROWS_AS(split_spatial(Tensor({1, 4, 2, 7}, 0.0), 3), std::runtime_error);
}

TEST_CASE("concat/split round-trips exactly on all small shapes") {
    Rng rng(11);
    for (int c = 1; c <= 8; ++c)
        for (int h = 1; h <= 8; ++h)
            for (int w = 1; w <= 8; ++w) {
                Tensor a = rng.uniform_tensor({2, c, h, 1}, -2.0, 2.0);
                Tensor b = rng.uniform_tensor({2, c, 1, w}, -2.0, 2.0);
                auto [ra, rb] = split_spatial(concat_spatial(a, b), h);
                CHECK(ra.shape == a.shape);
                CHECK(rb.shape == b.shape);
                CHECK(ra.data == a.data);
                CHECK(rb.data == b.data);
            }
}

TEST_CASE("broadcast_mul matches the triple-loop definition") {
    Tensor ones({2, 3, 4, 5}, 1.0);
    Tensor gh1({2, 3, 4, 1}, 1.0), gw1({2, 3, 1, 5}, 1.0);
    Rng rng(13);
    Tensor x = rng.uniform_tensor({2, 3, 4, 5}, -2.0, 2.0);
    CHECK(broadcast_mul(x, gh1, gw1).data == x.data);

    Tensor gh({1, 1, 2, 1}, std::vector<double>{1, 2});
    Tensor gw({1, 1, 1, 2}, std::vector<double>{1, 1});
    Tensor rows = broadcast_mul(Tensor({1, 1, 2, 2}, 1.0), gh, gw);
    CHECK(rows.data == std::vector<double>{1, 1, 2, 2});

    Tensor ghr = rng.uniform_tensor({2, 3, 4, 1}, -2.0, 2.0);
    Tensor gwr = rng.uniform_tensor({2, 3, 1, 5}, -2.0, 2.0);
    Tensor y = broadcast_mul(x, ghr, gwr);
    for (int n = 0; n < 2; ++n)
        for (int c = 0; c < 3; ++c)
            for (int i = 0; i < 4; ++i)
                for (int j = 0; j < 5; ++j)
                    CHECK(y.at(n, c, i, j) == x.at(n, c, i, j) * ghr.at(n, c, i, 0) * gwr.at(n, c, 0, j));

    CHECK_THROWS_AS(broadcast_mul(x, gwr, ghr), std::runtime_error);
    CHECK_THROWS_AS(broadcast_mul(x, Tensor({2, 3, 3, 1}, 1.0), gwr), std::runtime_error);
}

TEST_CASE("all_finite flags non-finite values") {
    Tensor t({2, 2}, 1.0);
    CHECK(t.all_finite());
    t.data[3] = std::nan("");
    CHECK(!t.all_finite());
    t.data[3] = INFINITY;
    CHECK(!t.all_finite());
}
