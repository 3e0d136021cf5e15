#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>

#include "itcfn/grad_check.hpp"
#include "itcfn/mmg.hpp"
#include "itcfn/verify/oracles.hpp"

using namespace itcfn;
using namespace itcfn::mmg;

namespace {

Codebook codebook_from(const std::vector<std::vector<double>>& rows) {
    Rng rng(1);
    Codebook cb(rows.size(), rows[0].size(), rng);
    auto d = cb.codes().mutable_data();
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < rows[i].size(); ++j) d[i * rows[i].size() + j] = rows[i][j];
    return cb;
}

// One latent position per point: z_hat[1, d, 1, 1, P].
Tensor positions(const std::vector<std::vector<double>>& pts) {
    const std::size_t p = pts.size(), d = pts[0].size();
    std::vector<double> v(d * p);
    for (std::size_t i = 0; i < p; ++i)
        for (std::size_t c = 0; c < d; ++c) v[c * p + i] = pts[i][c];
    return Tensor::from_data({1, d, 1, 1, p}, v);
}

MmgConfig small_config() {
    MmgConfig c;
    c.volume_shape = {8, 8, 8};
    c.codebook_size = 8;
    c.code_dim = 4;
    c.seed = 11;
    return c;
}

std::string file_bytes(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST(Quantize, NearestByInspection) {
    const auto cb = codebook_from({{0, 0}, {1, 1}});
    const auto q = quantize(positions({{0.1, 0.1}}), cb);
    EXPECT_EQ(q.indices[0], 0u);
    EXPECT_DOUBLE_EQ(q.z_q.data()[0], 0.0);
    EXPECT_DOUBLE_EQ(q.z_q.data()[1], 0.0);
}

TEST(Quantize, ExactCodeHasZeroDistance) {
    const auto cb = codebook_from({{0, 0}, {1, 0}, {0, 1}, {0.25, -0.75}, {2, 2}});
    const auto q = quantize(positions({{0.25, -0.75}}), cb);
    EXPECT_EQ(q.indices[0], 3u);
    EXPECT_EQ(q.z_q.data()[0], 0.25);
    EXPECT_EQ(q.z_q.data()[1], -0.75);
}

TEST(Quantize, TiesGoToLowestIndex) {
    const auto cb = codebook_from({{0, 0}, {1, 1}});
    EXPECT_EQ(quantize(positions({{0.5, 0.5}}), cb).indices[0], 0u);
}

TEST(Quantize, MatchesBruteForceOracle) {
    Rng rng(5);
    std::vector<std::vector<double>> codes(16, std::vector<double>(6));
    for (auto& c : codes)
        for (auto& v : c) v = static_cast<float>(rng.normal());
    std::vector<std::vector<double>> pts(100, std::vector<double>(6));
    for (auto& p : pts)
        for (auto& v : p) v = static_cast<float>(rng.normal());
    const auto q = quantize(positions(pts), codebook_from(codes));
    EXPECT_EQ(q.indices, oracle::nearest_codes(pts, codes));
}

TEST(Quantize, OutputRowsAreExactCodes) {
    Rng rng(8);
    Codebook cb(8, 4, rng);
    const Tensor z = normal_tensor({2, 4, 2, 2, 2}, 0.2, rng);
    const auto q = quantize(z, cb);
    const auto codes = cb.codes().data();
    for (std::size_t b = 0; b < 2; ++b)
        for (std::size_t p = 0; p < 8; ++p)
            for (std::size_t c = 0; c < 4; ++c)
                EXPECT_EQ(q.z_q.data()[(b * 4 + c) * 8 + p], codes[q.indices[b * 8 + p] * 4 + c]);
}

TEST(Quantize, DimensionMismatchThrows) {
    Rng rng(1);
    Codebook cb(4, 3, rng);
    EXPECT_THROW(quantize(Tensor::zeros({1, 2, 1, 1, 1}), cb), std::invalid_argument);
    EXPECT_THROW(quantize(Tensor::zeros({2, 3}), cb), std::invalid_argument);
}

TEST(Quantize, StraightThroughPassesGradientUnchanged) {
    Rng rng(9);
    Codebook cb(8, 4, rng);
    Tensor z = normal_tensor({1, 4, 2, 2, 2}, 0.3, rng);
    z.set_requires_grad(true);
    const auto q = quantize(z, cb);
    const Tensor r = normal_tensor(q.z_q.shape(), 1.0, rng);
    const Tensor loss = ops::sum(ops::mul(ops::tanh(q.z_q), r));
    loss.backward();
    ASSERT_TRUE(q.z_q.has_grad());
    ASSERT_TRUE(z.has_grad());
    const auto gq = q.z_q.grad();
    const auto gz = z.grad();
    ASSERT_EQ(gq.size(), gz.size());
    for (std::size_t i = 0; i < gq.size(); ++i) EXPECT_EQ(gq[i], gz[i]);
    // Codes receive nothing through the decoder path.
    EXPECT_FALSE(cb.codes().has_grad());
}

class HybridLossTest : public ::testing::Test {
protected:
    Rng rng{21};
    PerceptualNet perceptual{rng};
    Tensor y_true = normal_tensor({2, 1, 8, 8, 8}, 1.0, rng);
    Tensor z_hat = normal_tensor({2, 4, 1, 1, 1}, 1.0, rng);
    Tensor z_q = normal_tensor({2, 4, 1, 1, 1}, 1.0, rng);
    Tensor scores = normal_tensor({2, 1, 2, 2, 2}, 1.0, rng);
};

TEST_F(HybridLossTest, ZeroWhenGeneratedEqualsTruth) {
    const auto l = hybrid_loss(y_true, y_true.clone(), z_hat, z_q, scores, perceptual, {1, 0, 0, 0});
    EXPECT_EQ(l.total.item(), 0.0);
}

TEST_F(HybridLossTest, ConstantOffsetGivesMeanAbs) {
    const Tensor y_gen = ops::add_scalar(y_true, 0.5);
    const auto l = hybrid_loss(y_true, y_gen, z_hat, z_q, scores, perceptual, {1, 0, 0, 0});
    EXPECT_NEAR(l.total.item(), 0.5, 1e-6);
}

TEST_F(HybridLossTest, WeightedSumMatchesIndependentRecompute) {
    PrecisionScope wide(Precision::Float64);
    const Tensor y_gen = normal_tensor(y_true.shape(), 1.0, rng);
    const auto l = hybrid_loss(y_true, y_gen, z_hat, z_q, scores, perceptual, {0.7, 0.3, 0, 0});
    double l1 = 0.0;
    for (std::size_t i = 0; i < y_true.numel(); ++i) l1 += std::fabs(y_gen.at(i) - y_true.at(i));
    l1 /= static_cast<double>(y_true.numel());
    double sq = 0.0;
    for (std::size_t i = 0; i < z_hat.numel(); ++i) sq += (z_hat.at(i) - z_q.at(i)) * (z_hat.at(i) - z_q.at(i));
    sq /= static_cast<double>(z_hat.numel());
    const double lqua = sq + 0.25 * sq;
    EXPECT_NEAR(l.total.item(), 0.7 * l1 + 0.3 * lqua, 1e-12);
    EXPECT_NEAR(l.l1.item(), l1, 1e-12);
    EXPECT_NEAR(l.quantization.item(), lqua, 1e-12);
}

TEST_F(HybridLossTest, SingleWeightSelectsComponent) {
    PrecisionScope wide(Precision::Float64);
    const Tensor y_gen = normal_tensor(y_true.shape(), 1.0, rng);
    const std::array<HybridLossWeights, 4> unit = {{{1, 0, 0, 0}, {0, 1, 0, 0}, {0, 0, 1, 0}, {0, 0, 0, 1}}};
    for (std::size_t k = 0; k < 4; ++k) {
        const auto l = hybrid_loss(y_true, y_gen, z_hat, z_q, scores, perceptual, unit[k]);
        const std::array<double, 4> parts = {l.l1.item(), l.quantization.item(), l.perceptual.item(),
                                             l.adversarial.item()};
        EXPECT_EQ(l.total.item(), parts[k]) << "component " << k;
        for (double v : parts) EXPECT_GE(v, 0.0);
    }
}

TEST_F(HybridLossTest, QuantizationZeroWhenLatentsAreCodes) {
    const auto l = hybrid_loss(y_true, y_true, z_q.clone(), z_q, scores, perceptual, {0, 1, 0, 0});
    EXPECT_EQ(l.quantization.item(), 0.0);
}

TEST_F(HybridLossTest, NegativeWeightRejected) {
    EXPECT_THROW(hybrid_loss(y_true, y_true, z_hat, z_q, scores, perceptual, {1, -0.1, 0, 0}), std::invalid_argument);
}

TEST_F(HybridLossTest, DiscriminatorLossFiniteAndNonNegative) {
    const double v = discriminator_loss(scores, ops::mul_scalar(scores, 1e6)).item();
    EXPECT_TRUE(std::isfinite(v));
    EXPECT_GE(v, 0.0);
}

TEST(MmgModel, GeneratePetShapeFiniteDeterministic) {
    MmgModel m(MmgConfig{});
    Rng rng(4);
    Volume v({16, 16, 16});
    for (auto& x : v.data) x = static_cast<float>(rng.normal());
    const Volume a = m.generate_pet(v);
    const Volume b = m.generate_pet(v);
    EXPECT_EQ(a.dims, v.dims);
    for (float x : a.data) ASSERT_TRUE(std::isfinite(x));
    EXPECT_EQ(a.data, b.data);
    EXPECT_THROW(m.generate_pet(Volume({8, 16, 16})), std::invalid_argument);
}

TEST(MmgModel, LatentGridIsTwoCubed) {
    MmgModel m(MmgConfig{});
    NoGradGuard g;
    const auto f = m.forward(Tensor::zeros({1, 1, 16, 16, 16}));
    EXPECT_EQ(f.z_hat.shape(), (Shape{1, 32, 2, 2, 2}));
    EXPECT_EQ(f.pet.shape(), (Shape{1, 1, 16, 16, 16}));
    EXPECT_EQ(m.codebook().size(), 64u);
}

TEST(MmgModel, CheckpointRoundtripIsBitwise) {
    const auto dir = std::filesystem::temp_directory_path() / "itcfn_mmg_ckpt";
    std::filesystem::create_directories(dir);
    MmgConfig c = small_config();
    MmgModel m(c);
    m.save(dir / "a.itck");
    MmgModel r = MmgModel::from_checkpoint(dir / "a.itck");
    EXPECT_EQ(parameter_checksum(m.all_params()), parameter_checksum(r.all_params()));
    r.save(dir / "b.itck");
    EXPECT_EQ(file_bytes(dir / "a.itck"), file_bytes(dir / "b.itck"));
    const auto meta = load_checkpoint(dir / "a.itck").metadata;
    EXPECT_NE(meta.find("\"codebook_size\":8"), std::string::npos);
    EXPECT_NE(meta.find("\"seed\":11"), std::string::npos);

    MmgConfig other = c;
    other.code_dim = 6;
    MmgModel wrong(other);
    EXPECT_THROW(wrong.load(dir / "a.itck"), CheckpointError);
    std::filesystem::remove_all(dir);
}

TEST(MmgModel, InvalidConfigRejected) {
    MmgConfig c;
    c.volume_shape = {12, 16, 16};
    EXPECT_THROW(MmgModel{c}, std::invalid_argument);
    c = MmgConfig{};
    c.weights.perceptual = -1;
    EXPECT_THROW(MmgModel{c}, std::invalid_argument);
}

// The straight-through estimator is not the true derivative of the
// quantized path, so the composite is checked with the code assignment held
// fixed: the full hybrid loss against decoder and codebook, and the
// quantization term against the encoder.
class MmgGradCheck : public ::testing::Test {
protected:
    void SetUp() override {
        Rng rng(2);
        x = normal_tensor({1, 1, 8, 8, 8}, 1.0, rng);
        y = normal_tensor({1, 1, 8, 8, 8}, 1.0, rng);
        PrecisionScope wide(Precision::Float64);
        NoGradGuard g;
        const auto f = model.forward(x);
        idx = f.quantized.indices;
        grid = f.quantized.index_shape;
        z_hat0 = f.z_hat;
        z_q0 = f.quantized.z_q_codes;
    }
    std::vector<Tensor> select(const std::string& prefix) const {
        std::vector<Tensor> out;
        for (const auto& p : model.all_params())
            if (p.name.rfind(prefix, 0) == 0) out.push_back(p.tensor);
        return out;
    }

    MmgModel model{small_config()};
    Tensor x, y, z_hat0, z_q0;
    std::vector<std::size_t> idx;
    Shape grid;
};

TEST_F(MmgGradCheck, HybridLossThroughDecoderAndCodebook) {
    const Tensor z_hat = model.encode(x).detach();
    auto probe = select("decoder");
    probe.push_back(model.codebook().codes());
    const auto r = grad_check_params(
        [&] {
            const Tensor zq = ops::codebook_lookup(model.codebook().codes(), idx, grid);
            const Tensor gen = model.decode(zq);
            return hybrid_loss(y, gen, z_hat, zq, model.discriminator()(gen), model.perceptual(), {1.0, 1.0, 0.1, 0.01},
                               0.25, z_hat0, z_q0)
                .total;
        },
        probe, 1e-3, 48);
    EXPECT_LT(r.max_rel_error, 1e-2) << "tensor " << r.worst_tensor << " index " << r.worst_index << " analytic " << r.analytic << " numeric " << r.numeric;
    EXPECT_LT(r.straddled * 2, r.probed);
}

TEST_F(MmgGradCheck, QuantizationTermThroughEncoder) {
    const auto r = grad_check_params(
        [&] {
            const Tensor zq = ops::codebook_lookup(model.codebook().codes(), idx, grid);
            return hybrid_loss(y, y, model.encode(x), zq, Tensor::zeros({1}), model.perceptual(), {0, 1, 0, 0}, 0.25,
                               z_hat0, z_q0)
                .total;
        },
        select("encoder"), 1e-3, 48);
    EXPECT_LT(r.max_rel_error, 1e-2) << "tensor " << r.worst_tensor << " index " << r.worst_index << " analytic " << r.analytic << " numeric " << r.numeric;
    EXPECT_LT(r.straddled * 2, r.probed);
}

TEST_F(MmgGradCheck, DiscriminatorObjective) {
    const auto r = grad_check_params(
        [&] { return discriminator_loss(model.discriminator()(y), model.discriminator()(x)); },
        select("discriminator"), 1e-3, 48);
    EXPECT_LT(r.max_rel_error, 1e-2) << "tensor " << r.worst_tensor << " index " << r.worst_index << " analytic " << r.analytic << " numeric " << r.numeric;
    EXPECT_LT(r.straddled * 2, r.probed);
}
