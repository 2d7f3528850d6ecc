#include <doctest.h>

#include <cmath>

#include "babynet/common.hpp"
#include "babynet/ops.hpp"
#include "oracles.hpp"

using namespace babynet;
namespace op = babynet::ops;

namespace {

Tensor random_tensor(Rng& rng, std::vector<int> shape, bool requires_grad = false,
                     double lo = -1.0, double hi = 1.0) {
    Tensor t = Tensor::zeros(std::move(shape), requires_grad);
    for (float& v : t.data()) v = static_cast<float>(rng.uniform(lo, hi));
    return t;
}

void check_close(const Tensor& a, const Tensor& b, double tol) {
    REQUIRE(a.shape() == b.shape());
    for (int64_t i = 0; i < a.numel(); ++i) {
        CHECK(std::abs(a.data()[static_cast<std::size_t>(i)] -
                       b.data()[static_cast<std::size_t>(i)]) <= tol);
    }
}

}  // namespace

// ---------------------------------------------------------------------------
// conv3d
// ---------------------------------------------------------------------------

TEST_CASE("conv3d stem shape matches the architecture table") {
    Tensor x = Tensor::zeros({1, 1, 16, 64, 64});
    Tensor w = Tensor::zeros({64, 1, 3, 7, 7});
    op::Conv3dSpec spec{{1, 2, 2}, {1, 3, 3}};
    Tensor y = op::conv3d(nullptr, x, w, nullptr, spec);
    CHECK(y.shape() == std::vector<int>{1, 64, 16, 32, 32});
}

TEST_CASE("conv3d with a unit 1x1x1 kernel is the identity") {
    Rng rng(11);
    Tensor x = random_tensor(rng, {1, 1, 3, 4, 5});
    Tensor w = Tensor::full({1, 1, 1, 1, 1}, 1.0f);
    Tensor y = op::conv3d(nullptr, x, w, nullptr, {});
    check_close(y, x, 0.0);
}

TEST_CASE("conv3d matches the nested-loop oracle") {
    Rng rng(12);
    // strided, padded, multi-channel, with bias
    Tensor x = random_tensor(rng, {2, 2, 4, 5, 3});
    Tensor w = random_tensor(rng, {3, 2, 3, 3, 2});
    Tensor b = random_tensor(rng, {3});
    op::Conv3dSpec spec{{2, 1, 2}, {1, 1, 0}};
    Tensor got = op::conv3d(nullptr, x, w, &b, spec);
    Tensor want = oracle::conv3d_loop(x, w, &b, 2, 1, 2, 1, 1, 0);
    check_close(got, want, 1e-5);

    // the in-library reference path must agree too
    Tensor ref = op::conv3d_reference(x, w, &b, spec);
    check_close(got, ref, 1e-5);
}

TEST_CASE("conv3d channel mismatch error reports both shapes") {
    Tensor x = Tensor::zeros({1, 3, 4, 4, 4});
    Tensor w = Tensor::zeros({2, 2, 3, 3, 3});
    try {
        op::conv3d(nullptr, x, w, nullptr, {{1, 1, 1}, {1, 1, 1}});
        CHECK(false);
    } catch (const ShapeError& e) {
        std::string msg = e.what();
        CHECK(msg.find("[1,3,4,4,4]") != std::string::npos);
        CHECK(msg.find("[2,2,3,3,3]") != std::string::npos);
    }
}

TEST_CASE("conv3d rejects kernels larger than the padded input") {
    Tensor x = Tensor::zeros({1, 1, 2, 2, 2});
    Tensor w = Tensor::zeros({1, 1, 3, 3, 3});
    CHECK_THROWS_AS(op::conv3d(nullptr, x, w, nullptr, {}), ShapeError);
}

// ---------------------------------------------------------------------------
// batchnorm3d
// ---------------------------------------------------------------------------

TEST_CASE("batchnorm3d constant input collapses to beta") {
    Tensor x = Tensor::zeros({2, 3, 2, 2, 2});
    for (int64_t i = 0; i < x.numel(); ++i) x.data()[static_cast<std::size_t>(i)] = 4.25f;
    Tensor gamma = Tensor::full({3}, 2.0f);
    Tensor beta = Tensor::from_data({3}, {0.5f, -1.0f, 3.0f});
    op::BatchNormState state;
    Tensor y = op::batchnorm3d(nullptr, x, gamma, beta, state, op::BatchNormMode::Train, 0.1f,
                               1e-5f);
    for (int c = 0; c < 3; ++c)
        for (int n = 0; n < 2; ++n)
            CHECK(y.at({n, c, 0, 1, 1}) == beta.at({c}));
}

TEST_CASE("batchnorm3d normalizes to zero mean unit variance") {
    Rng rng(13);
    Tensor x = random_tensor(rng, {2, 3, 2, 4, 4}, false, -2.0, 5.0);
    Tensor gamma = Tensor::full({3}, 1.0f);
    Tensor beta = Tensor::zeros({3});
    op::BatchNormState state;
    Tensor y = op::batchnorm3d(nullptr, x, gamma, beta, state, op::BatchNormMode::Train, 0.1f,
                               1e-5f);
    int64_t m = 2 * 2 * 4 * 4;
    for (int c = 0; c < 3; ++c) {
        double mean = 0.0, var = 0.0;
        for (int n = 0; n < 2; ++n)
            for (int t = 0; t < 2; ++t)
                for (int h = 0; h < 4; ++h)
                    for (int w = 0; w < 4; ++w) mean += y.at({n, c, t, h, w});
        mean /= static_cast<double>(m);
        for (int n = 0; n < 2; ++n)
            for (int t = 0; t < 2; ++t)
                for (int h = 0; h < 4; ++h)
                    for (int w = 0; w < 4; ++w) {
                        double d = y.at({n, c, t, h, w}) - mean;
                        var += d * d;
                    }
        var /= static_cast<double>(m);
        CHECK(std::abs(mean) < 1e-4);
        CHECK(std::abs(var - 1.0) < 1e-4);
    }
}

TEST_CASE("batchnorm3d matches the scalar oracle") {
    Rng rng(14);
    Tensor x = random_tensor(rng, {2, 3, 2, 4, 4}, false, -3.0, 3.0);
    Tensor gamma = random_tensor(rng, {3}, false, 0.5, 2.0);
    Tensor beta = random_tensor(rng, {3});
    op::BatchNormState state;
    Tensor got = op::batchnorm3d(nullptr, x, gamma, beta, state, op::BatchNormMode::Train, 0.1f,
                                 1e-5f);
    Tensor want = oracle::batchnorm_loop(x, gamma, beta, 1e-5);
    check_close(got, want, 1e-5);
}

TEST_CASE("batchnorm3d eval before any update is an error") {
    Tensor x = Tensor::zeros({1, 2, 1, 2, 2});
    Tensor gamma = Tensor::full({2}, 1.0f);
    Tensor beta = Tensor::zeros({2});
    op::BatchNormState state;
    CHECK_THROWS_AS(
        op::batchnorm3d(nullptr, x, gamma, beta, state, op::BatchNormMode::Eval, 0.1f, 1e-5f),
        ValueError);
}

TEST_CASE("batchnorm3d running statistics follow the momentum rule") {
    Tensor x = Tensor::full({1, 1, 1, 2, 2}, 3.0f);
    Tensor gamma = Tensor::full({1}, 1.0f);
    Tensor beta = Tensor::zeros({1});
    op::BatchNormState state;
    op::batchnorm3d(nullptr, x, gamma, beta, state, op::BatchNormMode::Train, 0.1f, 1e-5f);
    // starts from (mean 0, var 1); new = 0.9 * old + 0.1 * batch
    CHECK(state.initialized);
    CHECK(std::abs(state.running_mean[0] - 0.3f) < 1e-6);
    CHECK(std::abs(state.running_var[0] - 0.9f) < 1e-6);
    // eval mode now works and uses the running statistics
    Tensor y = op::batchnorm3d(nullptr, x, gamma, beta, state, op::BatchNormMode::Eval, 0.1f,
                               1e-5f);
    CHECK(y.all_finite());
}

// ---------------------------------------------------------------------------
// relu / softmax
// ---------------------------------------------------------------------------

TEST_CASE("relu clamps negatives") {
    Tensor x = Tensor::from_data({3}, {-1.0f, 0.0f, 2.0f});
    Tensor y = op::relu(nullptr, x);
    CHECK(y.data()[0] == 0.0f);
    CHECK(y.data()[1] == 0.0f);
    CHECK(y.data()[2] == 2.0f);
}

TEST_CASE("relu gradient is the positive indicator") {
    Tensor x = Tensor::from_data({2}, {-1.0f, 3.0f}, true);
    Graph g;
    Tensor loss = op::sum_all(&g, op::relu(&g, x));
    g.backward(loss);
    CHECK(x.grad()[0] == 0.0f);
    CHECK(x.grad()[1] == 1.0f);
}

TEST_CASE("relu on an all-negative tensor gives zeros and zero gradient") {
    Tensor x = Tensor::full({2, 3}, -0.5f, true);
    Graph g;
    Tensor y = op::relu(&g, x);
    for (float v : y.data()) CHECK(v == 0.0f);
    Tensor loss = op::sum_all(&g, y);
    g.backward(loss);
    for (float v : x.grad()) CHECK(v == 0.0f);
}

TEST_CASE("softmax of a constant row is uniform") {
    Tensor x = Tensor::zeros({3});
    Tensor y = op::softmax_lastdim(nullptr, x);
    for (float v : y.data()) CHECK(std::abs(v - 1.0f / 3.0f) < 1e-7);
}

TEST_CASE("softmax rows sum to one, including huge logits") {
    Rng rng(15);
    Tensor x = random_tensor(rng, {4, 7}, false, -1e3, 1e3);
    Tensor y = op::softmax_lastdim(nullptr, x);
    CHECK(y.all_finite());
    for (int r = 0; r < 4; ++r) {
        double s = 0.0;
        for (int c = 0; c < 7; ++c) s += y.at({r, c});
        CHECK(std::abs(s - 1.0) < 1e-6);
    }
    Tensor extreme = Tensor::from_data({2}, {1000.0f, 0.0f});
    Tensor e = op::softmax_lastdim(nullptr, extreme);
    CHECK(e.all_finite());
    CHECK(std::abs(e.data()[0] - 1.0f) < 1e-6);
    CHECK(e.data()[1] < 1e-6);
}

// ---------------------------------------------------------------------------
// linear / matmul
// ---------------------------------------------------------------------------

TEST_CASE("linear with identity weight and zero bias is the identity") {
    Tensor x = Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
    Tensor w = Tensor::zeros({3, 3});
    for (int i = 0; i < 3; ++i) w.at({i, i}) = 1.0f;
    Tensor b = Tensor::zeros({3});
    Tensor y = op::linear(nullptr, x, w, b);
    check_close(y, x, 0.0);
}

TEST_CASE("linear produces the scalar prediction head shape") {
    Rng rng(16);
    Tensor x = random_tensor(rng, {1, 512});
    Tensor w = random_tensor(rng, {1, 512});
    Tensor b = random_tensor(rng, {1});
    Tensor y = op::linear(nullptr, x, w, b);
    CHECK(y.shape() == std::vector<int>{1, 1});
}

TEST_CASE("linear matches the dot-product oracle") {
    Rng rng(17);
    Tensor x = random_tensor(rng, {4, 9});
    Tensor w = random_tensor(rng, {5, 9});
    Tensor b = random_tensor(rng, {5});
    check_close(op::linear(nullptr, x, w, b), oracle::linear_loop(x, w, b), 1e-5);
}

TEST_CASE("linear rejects mismatched features") {
    Tensor x = Tensor::zeros({2, 4});
    Tensor w = Tensor::zeros({3, 5});
    Tensor b = Tensor::zeros({3});
    CHECK_THROWS_AS(op::linear(nullptr, x, w, b), ShapeError);
}

TEST_CASE("matmul_batched identity and oracle") {
    Rng rng(18);
    Tensor a = random_tensor(rng, {3, 3});
    Tensor eye = Tensor::zeros({3, 3});
    for (int i = 0; i < 3; ++i) eye.at({i, i}) = 1.0f;
    check_close(op::matmul_batched(nullptr, eye, a), a, 0.0);

    Tensor m = random_tensor(rng, {2, 3});
    Tensor n = random_tensor(rng, {3, 2});
    Tensor got = op::matmul_batched(nullptr, m, n);
    Tensor want = Tensor::zeros({2, 2});
    oracle::matmul_loop(m.data().data(), n.data().data(), want.data().data(), 2, 3, 2);
    check_close(got, want, 1e-6);
}

TEST_CASE("matmul_batched treats batch entries independently") {
    Rng rng(19);
    Tensor a1 = random_tensor(rng, {2, 4});
    Tensor b1 = random_tensor(rng, {4, 3});
    Tensor a = Tensor::zeros({2, 2, 4});
    Tensor b = Tensor::zeros({2, 4, 3});
    for (int i = 0; i < 2; ++i) {
        std::copy(a1.data().begin(), a1.data().end(), a.data().begin() + i * 8);
        std::copy(b1.data().begin(), b1.data().end(), b.data().begin() + i * 12);
    }
    Tensor y = op::matmul_batched(nullptr, a, b);
    for (int i = 0; i < 6; ++i) CHECK(y.data()[static_cast<std::size_t>(i)] ==
                                      y.data()[static_cast<std::size_t>(i + 6)]);
    CHECK_THROWS_AS(op::matmul_batched(nullptr, Tensor::zeros({2, 2, 3}), Tensor::zeros({3, 3, 2})),
                    ShapeError);
}

// ---------------------------------------------------------------------------
// global average pooling
// ---------------------------------------------------------------------------

TEST_CASE("global_avg_pool basics") {
    Tensor c = Tensor::full({2, 3, 2, 2, 2}, 1.25f);
    Tensor y = op::global_avg_pool(nullptr, c);
    CHECK(y.shape() == std::vector<int>{2, 3});
    for (float v : y.data()) CHECK(v == 1.25f);

    Tensor two = Tensor::from_data({1, 1, 2, 1, 1}, {1.0f, 3.0f});
    CHECK(op::global_avg_pool(nullptr, two).data()[0] == 2.0f);
}

TEST_CASE("global_avg_pool backward spreads the mean derivative") {
    Tensor x = Tensor::zeros({1, 2, 2, 3, 1}, true);
    Graph g;
    Tensor loss = op::sum_all(&g, op::global_avg_pool(&g, x));
    g.backward(loss);
    for (float v : x.grad()) CHECK(std::abs(v - 1.0f / 6.0f) < 1e-7);
}

// ---------------------------------------------------------------------------
// broadcast / reshape / permute
// ---------------------------------------------------------------------------

TEST_CASE("broadcast_add semantics and gradient reduction") {
    Tensor a = Tensor::from_data({2, 1}, {1.0f, 2.0f}, true);
    Tensor b = Tensor::from_data({1, 3}, {10.0f, 20.0f, 30.0f}, true);
    Graph g;
    Tensor y = op::broadcast_add(&g, a, b);
    CHECK(y.shape() == std::vector<int>{2, 3});
    CHECK(y.at({1, 2}) == 32.0f);
    g.backward(op::sum_all(&g, y));
    CHECK(a.grad()[0] == 3.0f);  // summed over the broadcast axis
    CHECK(b.grad()[1] == 2.0f);
    CHECK_THROWS_AS(op::broadcast_add(nullptr, Tensor::zeros({2, 2}), Tensor::zeros({3, 2})),
                    ShapeError);
}

TEST_CASE("permute round trips through its inverse") {
    Rng rng(20);
    Tensor x = random_tensor(rng, {2, 3, 4});
    Tensor y = op::permute(nullptr, x, {2, 0, 1});
    CHECK(y.shape() == std::vector<int>{4, 2, 3});
    CHECK(y.at({3, 1, 2}) == x.at({1, 2, 3}));
    Tensor back = op::permute(nullptr, y, {1, 2, 0});
    check_close(back, x, 0.0);
}

TEST_CASE("reshape preserves order and rejects bad sizes") {
    Tensor x = Tensor::from_data({2, 3}, {0, 1, 2, 3, 4, 5});
    Tensor y = op::reshape(nullptr, x, {3, 2});
    CHECK(y.at({2, 1}) == 5.0f);
    CHECK_THROWS_AS(op::reshape(nullptr, x, {4, 2}), ShapeError);
}
