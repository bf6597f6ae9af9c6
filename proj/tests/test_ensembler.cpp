#include <algorithm>
#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "lpe/ensembler.hpp"
#include "lpe/errors.hpp"
#include "lpe/rng.hpp"

namespace lpe {
namespace {

Checkpoint small_model(std::uint64_t seed = 3) { return init_checkpoint(ModelSpec::mlp({3, 6, 5, 4}), seed); }

Tensor inputs() { return Tensor::matrix({{0.5f, -1, 2}, {1, 1, 1}, {-0.3f, 0.2f, 0}, {3, -2, 0.1f}}); }

// Hand-built set on a one-layer 1 -> 2 model whose members replace W with the given rows.
MemberSet dense_members(const std::vector<Tensor>& weights) {
    ModelSpec spec = ModelSpec::mlp({1, 2});
    spec.quantize_mask = {true};
    MemberSet ms{std::nullopt, Checkpoint::zeros(spec), {}};
    for (std::size_t s = 0; s < weights.size(); ++s) ms.members.push_back(Member{s, s, {{0, weights[s]}}});
    return ms;
}

TEST(EnsembleSpec, Validation) {
    EXPECT_NO_THROW(EnsembleSpec::lpe_bsr(5, 10, 0).validate());
    EXPECT_THROW(EnsembleSpec({Method::rtn, 3, 5, std::nullopt, std::nullopt, 0}).validate(), ConfigError);
    EXPECT_THROW(EnsembleSpec({Method::lpe_bsr, 2, std::nullopt, std::nullopt, std::nullopt, 0}).validate(), ConfigError);
    EXPECT_THROW(EnsembleSpec({Method::gaussian, 2, 4, 0.1, std::nullopt, 0}).validate(), ConfigError);
    EXPECT_THROW(EnsembleSpec::gaussian(0.0, 2, 0).validate(), ConfigError);
    EXPECT_THROW(EnsembleSpec::mcd(1.0, 2, 0).validate(), ConfigError);
    EXPECT_THROW(EnsembleSpec::lpe_bsr(5, 0, 0).validate(), ConfigError);
    EXPECT_THROW(EnsembleSpec::lpe_bsr(5, kMaxEnsembleSize + 1, 0).validate(), ConfigError);
    EXPECT_THROW(parse_method("swag"), ConfigError);
    EXPECT_EQ(parse_method("bsr"), Method::lpe_bsr);
}

TEST(GenerateMembers, RtnIsSingleDeterministicMember) {
    const Checkpoint ckpt = small_model();
    const MemberSet ms = generate_members(ckpt, EnsembleSpec::rtn(5));
    ASSERT_EQ(ms.size(), 1u);
    for (std::size_t i = 0; i < 2; ++i) {
        const auto& q = std::get<QuantizedTensor>(ms.members[0].layers.at(i));
        EXPECT_EQ(q, rtn(ckpt.weight(i), build_grids(ckpt.weight(i), 5)));
    }
    EXPECT_FALSE(ms.members[0].layers.contains(2));
    EXPECT_EQ(ms.materialize(0).weight(2), ckpt.weight(2));
}

TEST(GenerateMembers, SameSeedIsBitIdentical) {
    const Checkpoint ckpt = small_model();
    const auto spec = EnsembleSpec::lpe_bsr(4, 2, 17);
    EXPECT_EQ(generate_members(ckpt, spec), generate_members(ckpt, spec, 4));
    EXPECT_NE(generate_members(ckpt, spec), generate_members(ckpt, EnsembleSpec::lpe_bsr(4, 2, 18)));
}

TEST(GenerateMembers, MemberSeedsAreDerived) {
    const MemberSet ms = generate_members(small_model(), EnsembleSpec::lpe_bsr(5, 6, 9));
    for (std::size_t s = 0; s < ms.size(); ++s) {
        EXPECT_EQ(ms.members[s].index, s);
        EXPECT_EQ(ms.members[s].seed, derive_seed(9, s));
    }
    EXPECT_NE(ms.members[0], ms.members[1]);
}

TEST(GenerateMembers, BsrStaysWithinOneStep) {
    const Checkpoint ckpt = small_model(11);
    const MemberSet ms = generate_members(ckpt, EnsembleSpec::lpe_bsr(3, 8, 2));
    for (std::size_t s = 0; s < ms.size(); ++s) {
        const Checkpoint m = ms.materialize(s);
        for (std::size_t i = 0; i < 2; ++i) {
            const auto grids = build_grids(ckpt.weight(i), 3);
            const std::size_t cols = ckpt.weight(i).cols();
            for (std::size_t k = 0; k < ckpt.weight(i).numel(); ++k) {
                EXPECT_LT(std::fabs(m.weight(i).data()[k] - ckpt.weight(i).data()[k]), grids.scales[k / cols]);
            }
        }
        EXPECT_EQ(m.weight(2), ckpt.weight(2));
        for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(m.bias(i), ckpt.bias(i));
    }
}

TEST(GenerateMembers, GaussianShrinksToCheckpoint) {
    const Checkpoint ckpt = small_model();
    const double sigma2 = 1e-10, sigma = std::sqrt(sigma2);
    const MemberSet ms = generate_members(ckpt, EnsembleSpec::gaussian(sigma2, 4, 5));
    for (std::size_t s = 0; s < ms.size(); ++s) {
        const Checkpoint m = ms.materialize(s);
        for (std::size_t i = 0; i < 2; ++i) {
            for (std::size_t k = 0; k < ckpt.weight(i).numel(); ++k) {
                // 6 sigma plus one float ulp of the weight itself.
                const double ulp = std::fabs(ckpt.weight(i).data()[k]) * 1.2e-7;
                EXPECT_LE(std::fabs(m.weight(i).data()[k] - ckpt.weight(i).data()[k]), 6 * sigma + ulp);
            }
        }
        EXPECT_EQ(m.weight(2), ckpt.weight(2));
    }
}

TEST(GenerateMembers, GaussianNoiseHasRequestedVariance) {
    Checkpoint ckpt = Checkpoint::zeros(ModelSpec::mlp({40, 50, 2}));
    const MemberSet ms = generate_members(ckpt, EnsembleSpec::gaussian(0.04, 1, 5));
    double sum = 0, sq = 0;
    const Tensor w = ms.materialize(0).weight(0);
    for (float v : w.data()) {
        sum += v;
        sq += v * v;
    }
    EXPECT_NEAR(sum / w.numel(), 0.0, 0.01);
    EXPECT_NEAR(sq / w.numel(), 0.04, 0.003);
}

TEST(GenerateMembers, McdMasksDropWeightsWithoutRescaling) {
    const Checkpoint ckpt = init_checkpoint(ModelSpec::mlp({20, 30, 3}), 2);
    const MemberSet ms = generate_members(ckpt, EnsembleSpec::mcd(0.3, 3, 1));
    for (std::size_t s = 0; s < ms.size(); ++s) {
        const auto& keep = std::get<DropMask>(ms.members[s].layers.at(0)).keep;
        double dropped = 0;
        for (float v : keep.data()) {
            ASSERT_TRUE(v == 0.0f || v == 1.0f);
            dropped += v == 0.0f;
        }
        EXPECT_NEAR(dropped / keep.numel(), 0.3, 0.05);
        const Checkpoint m = ms.materialize(s);
        for (std::size_t k = 0; k < keep.numel(); ++k) {
            EXPECT_EQ(m.weight(0).data()[k], keep.data()[k] == 0.0f ? 0.0f : ckpt.weight(0).data()[k]);
        }
        const Tensor x({1, 20}, std::vector<float>(20, 0.5f));
        EXPECT_EQ(ms.member_logits(s, x), forward(m, x));
    }
}

TEST(PredictProb, SingleMemberMatchesSoftmax) {
    const Checkpoint ckpt = small_model();
    const Tensor x = inputs();
    EXPECT_EQ(predict_prob_ensemble(MemberSet::single(ckpt), x).probs, softmax(forward(ckpt, x)));
}

TEST(PredictProb, IdenticalMembersMatchSingle) {
    const MemberSet one = generate_members(small_model(), EnsembleSpec::rtn(4));
    MemberSet many = one;
    for (std::size_t s = 1; s < 5; ++s) many.members.push_back(Member{s, 0, one.members[0].layers});
    const Tensor a = predict_prob_ensemble(one, inputs()).probs, b = predict_prob_ensemble(many, inputs()).probs;
    for (std::size_t k = 0; k < a.numel(); ++k) EXPECT_NEAR(a.data()[k], b.data()[k], 1e-7);
}

TEST(PredictProb, OppositeOneHotMembersAverage) {
    const MemberSet ms = dense_members({Tensor::matrix({{60}, {-60}}), Tensor::matrix({{-60}, {60}})});
    const auto out = predict_prob_ensemble(ms, Tensor::matrix({{1}}), true);
    EXPECT_FLOAT_EQ(out.probs.at(0, 0), 0.5f);
    EXPECT_FLOAT_EQ(out.probs.at(0, 1), 0.5f);
    ASSERT_TRUE(out.member_logits.has_value());
    EXPECT_EQ(out.member_logits->shape(), (Shape{2, 1, 2}));
}

TEST(PredictProb, RowsAreDistributions) {
    const MemberSet ms = generate_members(small_model(), EnsembleSpec::lpe_bsr(3, 7, 1));
    const Tensor p = predict_prob_ensemble(ms, inputs()).probs;
    for (std::size_t r = 0; r < p.rows(); ++r) {
        double sum = 0;
        for (float v : p.row(r)) sum += v;
        EXPECT_NEAR(sum, 1.0, 1e-6);
    }
}

TEST(PredictProb, ExchangeableInStorageOrder) {
    const MemberSet ms = generate_members(small_model(), EnsembleSpec::lpe_bsr(4, 6, 3));
    MemberSet shuffled = ms;
    std::mt19937 gen(4);
    std::shuffle(shuffled.members.begin(), shuffled.members.end(), gen);
    ASSERT_NE(shuffled.members, ms.members);
    EXPECT_NO_THROW(shuffled.validate());
    EXPECT_EQ(predict_prob_ensemble(shuffled, inputs()).probs, predict_prob_ensemble(ms, inputs()).probs);
    EXPECT_EQ(predict_logit_mean(shuffled, inputs()).probs, predict_logit_mean(ms, inputs()).probs);
}

TEST(PredictProb, InputWidthMismatch) {
    EXPECT_THROW(predict_prob_ensemble(MemberSet::single(small_model()), Tensor::matrix({{1, 2}})), DimensionError);
}

TEST(PredictLogitMean, ClosedForm) {
    const MemberSet ms = dense_members({Tensor::matrix({{0}, {0}}), Tensor::matrix({{2}, {0}})});
    const Tensor p = predict_logit_mean(ms, Tensor::matrix({{1}})).probs;
    // softmax(1, 0)
    const double e = std::exp(1.0);
    EXPECT_NEAR(p.at(0, 0), e / (e + 1), 1e-6);
    EXPECT_NEAR(p.at(0, 1), 1 / (e + 1), 1e-6);
    EXPECT_NEAR(p.at(0, 0), 0.731059, 1e-6);
}

TEST(PredictLogitMean, ShiftedMemberLeavesResult) {
    const MemberSet single = dense_members({Tensor::matrix({{0.7f}, {-1.2f}})});
    const MemberSet pair = dense_members({Tensor::matrix({{0.7f}, {-1.2f}}), Tensor::matrix({{3.7f}, {1.8f}})});
    const Tensor x = Tensor::matrix({{1}});
    const Tensor a = predict_logit_mean(single, x).probs, b = predict_logit_mean(pair, x).probs;
    for (std::size_t k = 0; k < 2; ++k) EXPECT_NEAR(a.data()[k], b.data()[k], 1e-6);
    EXPECT_EQ(predict_logit_mean(single, x).probs, softmax(single.member_logits(0, x)));
}

TEST(MemoryBudget, SingleFullPrecisionModel) {
    const Checkpoint ckpt = small_model();
    EXPECT_EQ(memory_budget(MemberSet::single(ckpt)), 32u * ckpt.spec.parameter_count());
}

TEST(MemoryBudget, OneFiveBitLayer) {
    ModelSpec spec = ModelSpec::mlp({3, 4, 2});
    spec.quantize_mask = {true, false};
    const Checkpoint ckpt = init_checkpoint(spec, 1);
    const MemberSet ms = generate_members(ckpt, EnsembleSpec::lpe_bsr(5, 1, 0));
    const std::uint64_t rest = 4 + 2 * 4 + 2;  // b0, W1, b1
    EXPECT_EQ(memory_budget(ms), 60u + 128u + 32u * rest);
}

TEST(MemoryBudget, LinearInMembers) {
    const Checkpoint ckpt = small_model();
    const auto b1 = memory_budget(generate_members(ckpt, EnsembleSpec::lpe_bsr(4, 1, 0)));
    const auto b2 = memory_budget(generate_members(ckpt, EnsembleSpec::lpe_bsr(4, 2, 0)));
    const auto b5 = memory_budget(generate_members(ckpt, EnsembleSpec::lpe_bsr(4, 5, 0)));
    EXPECT_EQ(b5 - b1, 4 * (b2 - b1));
    // Per masked layer (4 E + 32 C) < 32 E, so quantized members are cheaper than copies.
    const auto fp = 32u * ckpt.spec.parameter_count();
    EXPECT_LT(b1, fp);
}

TEST(MemberSet, ValidateCatchesBadMembers) {
    MemberSet ms = generate_members(small_model(), EnsembleSpec::lpe_bsr(4, 2, 0));
    MemberSet dup = ms;
    dup.members[1].index = 0;
    EXPECT_THROW(dup.validate(), ConfigError);
    MemberSet wrong_shape = ms;
    wrong_shape.members[0].layers[0] = Tensor({2, 2});
    EXPECT_THROW(wrong_shape.validate(), DimensionError);
}

}  // namespace
}  // namespace lpe
