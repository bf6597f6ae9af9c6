#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "lpe/dataset.hpp"
#include "lpe/ensembler.hpp"
#include "lpe/tensor.hpp"

namespace lpe {

constexpr double kProbFloor = 1e-12;
constexpr std::size_t kDefaultEceBins = 15;

// Mean of -log max(p[i, y_i], 1e-12).
double nll(const Tensor& probs, std::span<const int> labels);

// Fraction of rows whose argmax (first index on ties) differs from the label.
double err(const Tensor& probs, std::span<const int> labels);

// Binned ECE: bin j holds confidences in ((j-1)/J, j/J]; gaps weighted by bin occupancy.
double ece(const Tensor& probs, std::span<const int> labels, std::size_t bins = kDefaultEceBins);

// Index of the largest entry, smallest index on ties.
std::size_t argmax(std::span<const float> row);

struct Decomposition {
    double avg_loss = 0.0;       // mean member cross-entropy
    double ambiguity = 0.0;      // avg_loss - ensemble_loss
    double ensemble_loss = 0.0;  // cross-entropy of the logit-mean ensemble
};

// member_logits is [S x N x K]. avg_loss and ensemble_loss are computed independently
// from log-softmax (no probability floor); ambiguity is their difference.
Decomposition ambiguity_decomposition(const Tensor& member_logits, std::span<const int> labels);

// Per-member cross-entropy, [S] entries, from [S x N x K] logits.
std::vector<double> per_member_nll(const Tensor& member_logits, std::span<const int> labels);

// NLL of the probability-averaged ensemble evaluated in the log domain:
// log p_i = logsumexp_s(log softmax(z_si)[y_i]) - log S, floored at log(1e-12).
double ensemble_nll(const Tensor& member_logits, std::span<const int> labels);

struct EvalReport {
    double nll = 0.0;
    double err = 0.0;
    double ece = 0.0;
    double avg_loss = 0.0;
    double ambiguity = 0.0;
    double ensemble_loss = 0.0;
    std::uint64_t memory_bits = 0;
    std::vector<double> per_member_nll;
    std::size_t members = 0;
};

// Probability-ensemble NLL/ERR/ECE, the logit-mean decomposition and the memory budget.
EvalReport evaluate(const MemberSet& ms, const Dataset& data, std::size_t ece_bins = kDefaultEceBins);

}  // namespace lpe
