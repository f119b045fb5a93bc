#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "omoe/losses.hpp"
#include "omoe/rng.hpp"

using omoe::Matrix;

TEST_CASE("uniform binary logits cost ln 2 regardless of label") {
    Matrix logits{{0, 0}};
    CHECK(omoe::loss_cls(logits, {0}) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK(omoe::loss_cls(logits, {1}) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("logits (+10,-10) with label 0 cost ln(1+e^-20)") {
    Matrix logits{{10, -10}};
    const double expect = std::log(1.0 + std::exp(-20.0));  // ~2.06e-9
    CHECK(std::abs(omoe::loss_cls(logits, {0}) - expect) < 1e-15);
    CHECK(omoe::loss_cls(logits, {0}) == doctest::Approx(2.0611536e-9).epsilon(1e-6));
}

TEST_CASE("classification loss decreases monotonically in the margin") {
    double prev = 1e9;
    for (double m : {0.5, 1.0, 2.0, 5.0, 10.0, 30.0}) {
        Matrix logits{{m, -m}};
        const double l = omoe::loss_cls(logits, {0});
        CHECK(l >= 0.0);
        CHECK(l < prev);
        prev = l;
    }
    CHECK(prev < 1e-12);  // -> 0 in the limit
}

TEST_CASE("mean over the batch") {
    Matrix logits{{0, 0}, {10, -10}};
    const double expect = 0.5 * (std::log(2.0) + std::log(1.0 + std::exp(-20.0)));
    CHECK(omoe::loss_cls(logits, {0, 0}) == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("gating loss hand cases") {
    Matrix uniform{{0, 0}};
    CHECK(omoe::loss_gating(uniform, {0}) == doctest::Approx(std::log(2.0)).epsilon(1e-12));

    Matrix three{{5, 0, 0}};
    const double expect = std::log(1.0 + 2.0 * std::exp(-5.0));  // ~0.0134
    CHECK(omoe::loss_gating(three, {0}) == doctest::Approx(expect).epsilon(1e-12));
    CHECK(omoe::loss_gating(three, {0}) == doctest::Approx(0.0134).epsilon(1e-2));

    CHECK_THROWS_AS(omoe::loss_gating(three, {3}), omoe::InvalidInput);
    CHECK_THROWS_AS(omoe::loss_gating(three, {-1}), omoe::InvalidInput);
}

TEST_CASE("balance loss unit values") {
    omoe::BatchRoutingStats uniform{{0.25, 0.25, 0.25, 0.25}, {0.25, 0.25, 0.25, 0.25}, 8};
    CHECK(omoe::loss_balance(uniform) == doctest::Approx(1.0).epsilon(1e-12));

    omoe::BatchRoutingStats collapse{{1.0, 0.0}, {1.0, 0.0}, 8};
    CHECK(omoe::loss_balance(collapse) == doctest::Approx(2.0).epsilon(1e-15));

    // argmax routes (0,0,0,1); gate rows (.8,.2),(.6,.4),(.7,.3),(.3,.7)
    omoe::BatchRoutingStats hand{{0.75, 0.25}, {0.6, 0.4}, 4};
    CHECK(omoe::loss_balance(hand) == doctest::Approx(1.1).epsilon(1e-12));
}

TEST_CASE("balance loss is invariant under a joint permutation of experts") {
    omoe::BatchRoutingStats s{{0.5, 0.3, 0.2}, {0.4, 0.35, 0.25}, 10};
    omoe::BatchRoutingStats perm{{0.2, 0.5, 0.3}, {0.25, 0.4, 0.35}, 10};
    CHECK(omoe::loss_balance(s) == doctest::Approx(omoe::loss_balance(perm)).epsilon(1e-15));
}

namespace {

// Orthonormal basis from the first r columns of an identity, offset by `shift`.
Matrix eye_cols(std::size_t rows, std::size_t r, std::size_t shift) {
    Matrix m(rows, r);
    for (std::size_t c = 0; c < r; ++c) m.at(shift + c, c) = 1.0;
    return m;
}

}  // namespace

TEST_CASE("identical orthonormal bases against a single frozen basis cost 2r") {
    const std::size_t r = 3, rows = 8, cols = 6;
    omoe::ExpertPool pool;
    pool.universal = {eye_cols(rows, r, 0), {1, 1, 1}, eye_cols(cols, r, 0),
                      omoe::ExpertKind::universal, 0, false};
    omoe::Expert active{eye_cols(rows, r, 0), {1, 1, 1}, eye_cols(cols, r, 0),
                        omoe::ExpertKind::semantic, 0, false};
    pool.semantic = {active};
    // principal block orthogonal to the active basis -> contributes nothing
    Matrix pu = eye_cols(rows, 2, r + 1), pv = eye_cols(cols, 2, r);
    CHECK(omoe::loss_orth(active, pool, pu, pv) ==
          doctest::Approx(2.0 * static_cast<double>(r)).epsilon(1e-12));
}

TEST_CASE("mutually orthogonal bases cost zero") {
    const std::size_t r = 2, rows = 8, cols = 8;
    omoe::ExpertPool pool;
    pool.universal = {eye_cols(rows, r, 2), {1, 1}, eye_cols(cols, r, 2),
                      omoe::ExpertKind::universal, 0, false};
    omoe::Expert active{eye_cols(rows, r, 0), {1, 1}, eye_cols(cols, r, 0),
                        omoe::ExpertKind::semantic, 0, false};
    pool.semantic = {active};
    Matrix pu = eye_cols(rows, 2, 4), pv = eye_cols(cols, 2, 4);
    CHECK(omoe::loss_orth(active, pool, pu, pv) == doctest::Approx(0.0).epsilon(1e-15));
}

TEST_CASE("at pool init the loss is exactly the 2r universal-copy term") {
    omoe::Rng rng(61);
    Matrix w = rng.gaussian_matrix(10, 7);
    const std::size_t r = 2;
    auto d = omoe::decompose(w, r);
    auto pool = omoe::init_pool(d, 2);
    // Semantic expert 0 right after init: orthogonal to the principal block
    // (bottom vs top singular vectors of one SVD) but identical to the
    // universal copy.
    const double loss =
        omoe::loss_orth(pool.semantic[0], pool, d.principal_u, d.principal_v, true);
    CHECK(loss == doctest::Approx(2.0 * static_cast<double>(r)).epsilon(1e-6));
    // Universal expert compares against the principal block only.
    const double uloss =
        omoe::loss_orth(pool.universal, pool, d.principal_u, d.principal_v, true);
    CHECK(uloss < 1e-12);
}

TEST_CASE("excluding the universal from the preceding set drops its term") {
    omoe::Rng rng(67);
    auto d = omoe::decompose(rng.gaussian_matrix(9, 9), 3);
    auto pool = omoe::init_pool(d, 2);
    const double with_u = omoe::loss_orth(pool.semantic[0], pool, d.principal_u, d.principal_v, true);
    const double without_u =
        omoe::loss_orth(pool.semantic[0], pool, d.principal_u, d.principal_v, false);
    CHECK(with_u == doctest::Approx(6.0).epsilon(1e-6));
    CHECK(without_u < 1e-12);
}

TEST_CASE("pairwise term is symmetric under swapping the bases") {
    omoe::Rng rng(71);
    Matrix a = rng.gaussian_matrix(7, 3), b = rng.gaussian_matrix(7, 3);
    CHECK(omoe::orth_pair_term(a, b) == doctest::Approx(omoe::orth_pair_term(b, a)).epsilon(1e-12));
}

TEST_CASE("later experts accumulate terms for every preceding one") {
    omoe::Rng rng(73);
    auto d = omoe::decompose(rng.gaussian_matrix(8, 8), 2);
    auto pool = omoe::init_pool(d, 3);
    // all copies identical: expert 2 sees universal + experts 0,1 -> 3 * 2r
    const double loss =
        omoe::loss_orth(pool.semantic[2], pool, d.principal_u, d.principal_v, true);
    CHECK(loss == doctest::Approx(3 * 2 * 2.0).epsilon(1e-6));
}

TEST_CASE("stage objectives are the stated weighted sums") {
    omoe::LossConfig cfg;
    cfg.lambda1 = 0.0;
    cfg.lambda2 = 0.0;
    cfg.lambda3 = 0.0;
    CHECK(omoe::stage1_objective(0.7, 123.0, cfg) == 0.7);
    CHECK(omoe::stage2_objective(0.7, 9.0, 4.0, cfg) == 0.7);

    cfg.lambda1 = 0.01;
    CHECK(omoe::stage1_objective(0.5, 8.0, cfg) == doctest::Approx(0.58).epsilon(1e-15));

    cfg.lambda2 = 0.1;
    cfg.lambda3 = 0.1;
    CHECK(omoe::stage2_objective(0.5, 1.0, 2.0, cfg) == doctest::Approx(0.8).epsilon(1e-15));

    omoe::LossConfig bad;
    bad.lambda1 = -1;
    CHECK_THROWS_AS(bad.validate(), omoe::InvalidInput);
}

TEST_CASE("all losses are nonnegative on random inputs") {
    omoe::Rng rng(79);
    for (int i = 0; i < 10; ++i) {
        Matrix logits = rng.gaussian_matrix(6, 2);
        CHECK(omoe::loss_cls(logits, {0, 1, 0, 1, 0, 1}) >= 0.0);
        Matrix rl = rng.gaussian_matrix(4, 3);
        CHECK(omoe::loss_gating(rl, {0, 1, 2, 0}) >= 0.0);
    }
}
