#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "doctest.h"
#include "msef/optim.hpp"

using namespace msef;

TEST_CASE("zero gradient leaves parameters unchanged") {
    Tensor p(2, 2, 1.25);
    std::vector<double> g(4, 0.0), m, v;
    adam_step(p, g, m, v, 1, AdamHyper{});
    for (double x : p.data) CHECK(x == 1.25);
}

TEST_CASE("constant gradient moves parameters against its sign") {
    Tensor p(1, 2, 0.0);
    std::vector<double> g = {0.5, -2.0}, m, v;
    AdamHyper hp;
    for (int64_t s = 1; s <= 50; ++s) adam_step(p, g, m, v, s, hp);
    CHECK(p.data[0] < 0.0);
    CHECK(p.data[1] > 0.0);
}

TEST_CASE("1-D quadratic (x-3)^2 converges with lr 0.1 in 500 steps") {
    Tensor x(1, 1, 0.0);
    std::vector<double> m, v;
    AdamHyper hp;
    hp.lr = 0.1;
    for (int64_t s = 1; s <= 500; ++s) {
        const std::vector<double> g = {2.0 * (x.data[0] - 3.0)};
        adam_step(x, g, m, v, s, hp);
    }
    CHECK(std::abs(x.data[0] - 3.0) < 0.01);
}

TEST_CASE("shape mismatch raises") {
    Tensor p(1, 2, 0.0);
    std::vector<double> g = {1.0}, m, v;
    CHECK_THROWS_AS(adam_step(p, g, m, v, 1, AdamHyper{}), ShapeError);
}

TEST_CASE("Adam class is deterministic across re-runs") {
    auto run = [] {
        Tensor a(1, 2, 1.0), b(2, 1, -1.0);
        Adam opt;
        for (int s = 0; s < 20; ++s) {
            std::vector<double> ga = {0.1 * (s + 1), -0.2};
            std::vector<double> gb = {0.05, 0.4};
            opt.step({&a, &b}, {&ga, &gb});
        }
        std::vector<double> out = a.data;
        out.insert(out.end(), b.data.begin(), b.data.end());
        return out;
    };
    CHECK(run() == run());
}
