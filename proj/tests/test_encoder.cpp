#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <functional>
#include <limits>
#include <vector>

#include "memmc/encoder.hpp"
#include "memmc/model.hpp"
#include "reference_mae.hpp"
#include "test_util.hpp"

using namespace memmc;
using testutil::random_mat;

namespace {

SelfAttentionParams<double> random_attention(Index width, Index heads, Index slots, Rng& rng) {
    SelfAttentionParams<double> p;
    p.init(width, heads, slots, rng);
    return p;
}

using HarvestFn = std::function<void(const std::string&, Param<double>&, bool)>;

}  // namespace

TEST_CASE("memory-off attention equals a plain attention reference") {
    Rng rng(701);
    for (int trial = 0; trial < 5; ++trial) {
        auto p = random_attention(8, 2, 0, rng);
        Mat<double> x = random_mat<double>(6, 8, rng);
        Mat<double> got = mem_self_attention(p, x);
        refmae::Md want = refmae::ref_attention(x, x, p.wq.w.v, p.wk.w.v, p.wv.w.v, p.out.w.v, p.out.b.v, 2);
        Mat<double> want_rm = want;
        CHECK(testutil::max_rel_diff(got, want_rm) < 1e-6);
        CHECK(testutil::max_abs_diff(got, want_rm) < 1e-12);
    }
}

TEST_CASE("single token with identity projections passes through unchanged") {
    SelfAttentionParams<double> p;
    Rng rng(1);
    p.init(4, 2, 0, rng);
    p.wq.w.v = Mat<double>::Identity(4, 4);
    p.wk.w.v = Mat<double>::Identity(4, 4);
    p.wv.w.v = Mat<double>::Identity(4, 4);
    p.out.w.v = Mat<double>::Identity(4, 4);
    p.out.b.v.setZero();
    Mat<double> x(1, 4);
    x << 0.3, -1.2, 0.05, 2.0;
    Mat<double> y = mem_self_attention(p, x);
    CHECK(testutil::max_abs_diff(y, x) < 1e-15);
}

TEST_CASE("saturated memory keys pull every output to the memory value") {
    SelfAttentionParams<double> p;
    Rng rng(2);
    p.init(4, 2, 2, rng);
    p.wq.w.v = Mat<double>::Identity(4, 4);
    p.wk.w.v.setZero();
    p.wv.w.v.setZero();
    p.out.w.v = Mat<double>::Identity(4, 4);
    p.out.b.v.setZero();
    p.mem_k.v.setConstant(100.0);
    Mat<double> c(1, 4);
    c << 0.3, -0.7, 0.25, 1.5;
    p.mem_v.v.row(0) = c.row(0);
    p.mem_v.v.row(1) = c.row(0);

    Mat<double> x = Mat<double>::Ones(3, 4);
    Mat<double> y = mem_self_attention(p, x);
    for (Index i = 0; i < y.rows(); ++i) {
        CHECK((y.row(i) - c.row(0)).cwiseAbs().maxCoeff() < 1e-12);
    }
}

TEST_CASE("attention weights span tokens plus memory and sum to one") {
    Rng rng(3);
    auto p = random_attention(8, 2, 4, rng);
    Mat<double> x = random_mat<double>(5, 8, rng);
    SelfAttentionCache<double> cache;
    self_attention_forward(p, x, cache);
    REQUIRE(cache.core.attn.size() == 2);
    for (const auto& a : cache.core.attn) {
        CHECK(a.rows() == 5);
        CHECK(a.cols() == 9);
        for (Index i = 0; i < a.rows(); ++i) {
            CHECK(a.row(i).sum() == doctest::Approx(1.0).epsilon(1e-6));
            CHECK(a.row(i).minCoeff() > 0.0);
        }
    }
}

TEST_CASE("memory slots change the output") {
    Rng rng(4);
    auto with_mem = random_attention(8, 2, 3, rng);
    auto no_mem = with_mem;
    no_mem.slots = 0;
    Mat<double> x = random_mat<double>(4, 8, rng);
    CHECK(testutil::max_abs_diff(mem_self_attention(with_mem, x), mem_self_attention(no_mem, x)) >
          1e-6);
}

TEST_CASE("memory-off encoder layer matches the reference block") {
    Rng rng(5);
    EncoderLayerParams<double> layer;
    layer.init(8, 2, 0, 16, rng);
    refmae::WeightMap w;
    ParamVisitorFn<double, HarvestFn> v(
        [&w](const std::string& name, Param<double>& param, bool) { w[name] = param.v; });
    layer.visit("blk", v);

    Mat<double> x = random_mat<double>(5, 8, rng);
    EncoderLayerCache<double> cache;
    Mat<double> got = encoder_layer_forward(layer, x, cache);
    Mat<double> want = refmae::ref_encoder_block(x, w, "blk", 2);
    CHECK(testutil::max_rel_diff(got, want) < 1e-6);
}

TEST_CASE("memory-off encoder stack matches the reference stack") {
    Rng rng(6);
    EncoderStackParams<double> p;
    p.init(/*patch_dim=*/4, /*width=*/8, /*heads=*/2, /*slots=*/0, /*depth=*/3, /*mlp_hidden=*/16,
           /*skips=*/true, rng);
    refmae::WeightMap w;
    ParamVisitorFn<double, HarvestFn> v(
        [&w](const std::string& name, Param<double>& param, bool) { w[name] = param.v; });
    p.visit("enc", v);

    Mat<double> patches = random_mat<double>(5, 4, rng);
    Mat<double> pos = random_mat<double>(5, 8, rng, 0.5);
    EncoderStackCache<double> cache;
    Mat<double> final_normed;
    EncoderOutputs<double> got = encode(p, patches, pos, cache, final_normed);

    refmae::Md t = refmae::Md(patches) * w.at("enc.embed.w");
    for (Eigen::Index i = 0; i < t.rows(); ++i) t.row(i) += w.at("enc.embed.b").row(0);
    t += refmae::Md(pos);
    std::vector<refmae::Md> outs;
    for (int j = 0; j < 3; ++j) {
        refmae::Md in = (j == 0) ? t : outs[static_cast<std::size_t>(j - 1)];
        const int src = refmae::ref_skip_source(j, 3);
        if (src >= 0) in += outs[static_cast<std::size_t>(src)];
        outs.push_back(refmae::ref_encoder_block(in, w, "enc.layer" + std::to_string(j), 2));
    }
    refmae::Md want_final =
        refmae::ref_layernorm(outs.back(), w.at("enc.ln_final.gamma"), w.at("enc.ln_final.beta"));

    REQUIRE(got.per_layer.size() == 3);
    for (int j = 0; j < 3; ++j) {
        Mat<double> want = outs[static_cast<std::size_t>(j)];
        CHECK(testutil::max_rel_diff(got.per_layer[static_cast<std::size_t>(j)], want) < 1e-6);
    }
    Mat<double> want_final_rm = want_final;
    CHECK(testutil::max_rel_diff(final_normed, want_final_rm) < 1e-6);
}

TEST_CASE("depth-1 stack retains exactly one output of token shape") {
    Rng rng(7);
    EncoderStackParams<double> p;
    p.init(4, 8, 2, 3, /*depth=*/1, 16, true, rng);
    Mat<double> patches = random_mat<double>(3, 4, rng);
    Mat<double> pos = Mat<double>::Zero(3, 8);
    EncoderStackCache<double> cache;
    Mat<double> final_normed;
    EncoderOutputs<double> out = encode(p, patches, pos, cache, final_normed);
    REQUIRE(out.per_layer.size() == 1);
    CHECK(out.per_layer[0].rows() == 3);
    CHECK(out.per_layer[0].cols() == 8);
    CHECK(final_normed.rows() == 3);
    CHECK(final_normed.cols() == 8);
}

TEST_CASE("duplicate tokens produce identical output rows") {
    Rng rng(8);
    EncoderStackParams<double> p;
    p.init(4, 8, 2, 0, 2, 16, true, rng);
    Mat<double> patches = random_mat<double>(4, 4, rng);
    patches.row(2) = patches.row(0);
    Mat<double> pos = Mat<double>::Zero(4, 8);
    EncoderStackCache<double> cache;
    Mat<double> final_normed;
    EncoderOutputs<double> out = encode(p, patches, pos, cache, final_normed);
    for (const auto& layer : out.per_layer) {
        CHECK((layer.row(2) - layer.row(0)).cwiseAbs().maxCoeff() < 1e-15);
    }
}

TEST_CASE("without positional rows the stack is permutation-equivariant") {
    Rng rng(9);
    EncoderStackParams<double> p;
    p.init(4, 8, 2, 3, 2, 16, true, rng);
    Mat<double> patches = random_mat<double>(5, 4, rng);
    Mat<double> pos = Mat<double>::Zero(5, 8);

    std::vector<int> perm{3, 0, 4, 1, 2};
    Mat<double> shuffled(5, 4);
    for (int i = 0; i < 5; ++i) shuffled.row(i) = patches.row(perm[static_cast<std::size_t>(i)]);

    EncoderStackCache<double> c1, c2;
    Mat<double> f1, f2;
    EncoderOutputs<double> base = encode(p, patches, pos, c1, f1);
    EncoderOutputs<double> permuted = encode(p, shuffled, pos, c2, f2);
    for (std::size_t l = 0; l < base.per_layer.size(); ++l) {
        for (int i = 0; i < 5; ++i) {
            Mat<double> a = permuted.per_layer[l].row(i);
            Mat<double> b = base.per_layer[l].row(perm[static_cast<std::size_t>(i)]);
            CHECK(testutil::max_rel_diff(a, b) < 1e-9);
        }
    }
}

TEST_CASE("repeated encoding is stateless") {
    Rng rng(10);
    EncoderStackParams<double> p;
    p.init(4, 8, 2, 3, 3, 16, true, rng);
    Mat<double> a = random_mat<double>(4, 4, rng);
    Mat<double> b = random_mat<double>(6, 4, rng);
    Mat<double> pos_a = random_mat<double>(4, 8, rng, 0.5);
    Mat<double> pos_b = random_mat<double>(6, 8, rng, 0.5);

    EncoderStackCache<double> c1, c2, c3;
    Mat<double> f1, f2, f3;
    EncoderOutputs<double> first = encode(p, a, pos_a, c1, f1);
    encode(p, b, pos_b, c2, f2);
    EncoderOutputs<double> again = encode(p, a, pos_a, c3, f3);
    for (std::size_t l = 0; l < first.per_layer.size(); ++l) {
        CHECK(testutil::max_abs_diff(first.per_layer[l], again.per_layer[l]) == 0.0);
    }
    CHECK(testutil::max_abs_diff(f1, f3) == 0.0);
}

TEST_CASE("loss gradients at encoder attention parameters match finite differences") {
    Model<double> model;
    model.init(testutil::tiny_config(), 42);
    Rng rng(11);
    Image<double> img = testutil::random_image<double>(8, 8, 1, rng);
    MaskPartition part = sample_mask(16, 0.75, 99);

    for (const char* name : {"enc.layer0.attn.mem_v", "enc.layer0.attn.mem_k",
                             "enc.layer1.attn.mem_v", "enc.layer0.attn.wq.w",
                             "enc.layer0.attn.wk.w", "enc.layer2.attn.wv.w"}) {
        auto fd = testutil::fd_check(model, img, part, name, 0, 0);
        INFO(name << " analytic=" << fd.analytic << " numeric=" << fd.numeric);
        CHECK(fd.rel_err() < 1e-4);
    }
    for (Eigen::Index r = 0; r < 3; ++r) {
        for (Eigen::Index c = 0; c < 8; c += 3) {
            auto fd = testutil::fd_check(model, img, part, "enc.layer1.attn.mem_k", r, c);
            CHECK(fd.rel_err() < 1e-4);
        }
    }
}

TEST_CASE("invalid inputs raise shape and finiteness errors") {
    Rng rng(12);
    auto p = random_attention(8, 2, 2, rng);
    Mat<double> bad = random_mat<double>(3, 8, rng);
    bad(1, 4) = std::numeric_limits<double>::quiet_NaN();
    SelfAttentionCache<double> cache;
    CHECK_THROWS_AS(self_attention_forward(p, bad, cache), NonFiniteError);

    Mat<double> empty(0, 8);
    CHECK_THROWS_AS(self_attention_forward(p, empty, cache), ShapeError);

    MhaCoreCache<double> core;
    Mat<double> q = random_mat<double>(3, 6, rng);
    CHECK_THROWS_AS(mha_core_forward(q, q, q, /*heads=*/4, core), ShapeError);
}
