#include "lpe/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "lpe/errors.hpp"

namespace lpe {

namespace {

void check_labels(const Tensor& probs, std::span<const int> labels) {
    if (probs.rank() < 2 || probs.rows() != labels.size()) {
        throw DimensionError("predictions " + shape_string(probs.shape()) + " do not match " +
                             std::to_string(labels.size()) + " labels");
    }
    if (labels.empty()) throw DataError("no data points to evaluate");
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= probs.cols()) {
            throw DataError("label " + std::to_string(labels[i]) + " at row " + std::to_string(i) + " outside [0, " +
                            std::to_string(probs.cols()) + ")");
        }
    }
}

struct LogitView {
    std::size_t members, points, classes;
};

LogitView check_member_logits(const Tensor& logits, std::span<const int> labels) {
    if (logits.rank() != 3) throw DimensionError("member logits must be [S x N x K], got " + shape_string(logits.shape()));
    const LogitView v{logits.dim(0), logits.dim(1), logits.dim(2)};
    if (v.points != labels.size()) {
        throw DimensionError("member logits " + shape_string(logits.shape()) + " do not match " +
                             std::to_string(labels.size()) + " labels");
    }
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= v.classes) {
            throw DataError("label " + std::to_string(labels[i]) + " at row " + std::to_string(i) + " outside [0, " +
                            std::to_string(v.classes) + ")");
        }
    }
    return v;
}

// -log softmax(z)[y]
double cross_entropy(std::span<const float> z, int y) { return log_sum_exp(z) - static_cast<double>(z[y]); }

}  // namespace

std::size_t argmax(std::span<const float> row) {
    return static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
}

double nll(const Tensor& probs, std::span<const int> labels) {
    check_labels(probs, labels);
    double total = 0.0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        total -= std::log(std::max(static_cast<double>(probs.at(i, labels[i])), kProbFloor));
    }
    return total / static_cast<double>(labels.size());
}

double err(const Tensor& probs, std::span<const int> labels) {
    check_labels(probs, labels);
    std::size_t wrong = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (argmax(probs.row(i)) != static_cast<std::size_t>(labels[i])) ++wrong;
    }
    return static_cast<double>(wrong) / static_cast<double>(labels.size());
}

double ece(const Tensor& probs, std::span<const int> labels, std::size_t bins) {
    check_labels(probs, labels);
    if (bins == 0) throw ConfigError("ECE needs at least one bin");
    std::vector<std::size_t> count(bins, 0);
    std::vector<double> correct(bins, 0.0), confidence(bins, 0.0);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const auto row = probs.row(i);
        const std::size_t top = argmax(row);
        const double conf = row[top];
        // conf in ((j-1)/J, j/J] lands in 1-based bin j = ceil(conf * J).
        const auto j = static_cast<std::size_t>(std::clamp(std::ceil(conf * static_cast<double>(bins)), 1.0,
                                                           static_cast<double>(bins))) - 1;
        ++count[j];
        confidence[j] += conf;
        if (top == static_cast<std::size_t>(labels[i])) correct[j] += 1.0;
    }
    double total = 0.0;
    for (std::size_t j = 0; j < bins; ++j) {
        if (count[j] == 0) continue;
        const double n = static_cast<double>(count[j]);
        total += n * std::fabs(correct[j] / n - confidence[j] / n);
    }
    return total / static_cast<double>(labels.size());
}

std::vector<double> per_member_nll(const Tensor& member_logits, std::span<const int> labels) {
    const auto v = check_member_logits(member_logits, labels);
    std::vector<double> out(v.members, 0.0);
    for (std::size_t s = 0; s < v.members; ++s) {
        double total = 0.0;
        for (std::size_t i = 0; i < v.points; ++i) total += cross_entropy(member_logits.row(s * v.points + i), labels[i]);
        out[s] = total / static_cast<double>(v.points);
    }
    return out;
}

Decomposition ambiguity_decomposition(const Tensor& member_logits, std::span<const int> labels) {
    const auto v = check_member_logits(member_logits, labels);
    if (v.members == 0) throw ConfigError("ambiguity decomposition needs at least one member");

    double avg = 0.0;
    for (double loss : per_member_nll(member_logits, labels)) avg += loss;
    avg /= static_cast<double>(v.members);

    double ens = 0.0;
    std::vector<double> mean(v.classes);
    for (std::size_t i = 0; i < v.points; ++i) {
        std::fill(mean.begin(), mean.end(), 0.0);
        for (std::size_t s = 0; s < v.members; ++s) {
            const auto z = member_logits.row(s * v.points + i);
            for (std::size_t k = 0; k < v.classes; ++k) mean[k] += z[k];
        }
        for (auto& m : mean) m /= static_cast<double>(v.members);
        ens += log_sum_exp(std::span<const double>(mean)) - mean[static_cast<std::size_t>(labels[i])];
    }
    ens /= static_cast<double>(v.points);
    return {avg, avg - ens, ens};
}

double ensemble_nll(const Tensor& member_logits, std::span<const int> labels) {
    const auto v = check_member_logits(member_logits, labels);
    const double log_floor = std::log(kProbFloor);
    const double log_s = std::log(static_cast<double>(v.members));
    std::vector<double> log_p(v.members);
    double total = 0.0;
    for (std::size_t i = 0; i < v.points; ++i) {
        for (std::size_t s = 0; s < v.members; ++s) {
            log_p[s] = -cross_entropy(member_logits.row(s * v.points + i), labels[i]);
        }
        const double lp = log_sum_exp(std::span<const double>(log_p)) - log_s;
        total -= std::max(lp, log_floor);
    }
    return total / static_cast<double>(v.points);
}

EvalReport evaluate(const MemberSet& ms, const Dataset& data, std::size_t ece_bins) {
    data.validate();
    const PredictionBatch pred = predict_prob_ensemble(ms, data.features, true);
    const Tensor& logits = *pred.member_logits;
    const auto dec = ambiguity_decomposition(logits, data.labels);

    EvalReport r;
    r.nll = ensemble_nll(logits, data.labels);
    r.err = err(pred.probs, data.labels);
    r.ece = ece(pred.probs, data.labels, ece_bins);
    r.avg_loss = dec.avg_loss;
    r.ambiguity = dec.ambiguity;
    r.ensemble_loss = dec.ensemble_loss;
    r.memory_bits = memory_budget(ms);
    r.per_member_nll = per_member_nll(logits, data.labels);
    r.members = ms.size();
    return r;
}

}  // namespace lpe
