#pragma once

#include "oglasses/dataset.hpp"
#include "oglasses/nn.hpp"

#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

namespace oglasses::classify {

using dataset::Label;
using dataset::Sample;

// ---- entropy classifier ----

struct EntropyRange {
    double low = 0.0;
    double high = 0.0;
};

// Shannon entropy rate of a 256-byte block, normalized to [0, 1].
double entropy_rate(std::span<const std::uint8_t> block);

// Grid search (step 0.001) for the range maximizing training F-measure;
// ties broken by smallest low, then smallest high.
EntropyRange fit_entropy_range(const std::vector<Sample>& train);

// Program iff low <= H <= high (closed interval).
Label classify_entropy(std::span<const std::uint8_t> block, const EntropyRange& range);

// ---- metrics ----

struct Metrics {
    std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
    double precision = 0.0, recall = 0.0, f_measure = 0.0;
};

Metrics evaluate(const std::vector<Label>& predictions, const std::vector<Label>& truths);
Metrics metrics_from_counts(std::size_t tp, std::size_t fp, std::size_t fn, std::size_t tn);

// ---- networks ----

// conv(128,128,96) -> relu -> conv(2,1,256) -> relu -> bn -> fc 3840->400
// -> relu -> bn -> fc 400->400 -> relu -> fc 400->2 -> softmax
nn::Network build_cnn();

// bn -> fc 2048->400 -> relu -> bn -> fc 400->400 -> relu -> fc 400->2 -> softmax
nn::Network build_mlp();

// Expands 256-byte samples to 2048-bit rows, MSB first within each byte.
nn::Matrix to_bits(std::span<const Sample> samples);
nn::Matrix to_targets(std::span<const Sample> samples); // one-hot, column 1 = Program

// Argmax of the softmax pair; an exact tie goes to Others.
std::vector<Label> predict(nn::Network& net, std::span<const Sample> samples,
                           std::size_t batch = 256);

// ---- training ----

struct TrainConfig {
    float learning_rate = 0.001f;
    std::size_t batch_size = 100;
    std::size_t epochs = 200;
    std::uint64_t seed = 0;
};

struct LearningCurve {
    std::vector<double> train_error;
    std::vector<double> test_error; // empty when no test set was supplied
};

// Mini-batch SGD: per epoch, seeded shuffle, disjoint covering mini-batches
// (last one short; a trailing remainder of a single sample is dropped since
// batch statistics need two), one plain SGD step per batch. Records the mean
// cross-entropy per epoch; test error uses inference mode. Throws on
// divergence (non-finite loss).
LearningCurve train(nn::Network& net, std::span<const Sample> train_set,
                    std::span<const Sample> test_set, const TrainConfig& cfg);

// ---- cross-validation ----

struct FoldResult {
    Metrics metrics;
    LearningCurve curve;
};

// Stratified folds: disjoint cover, sizes differ by at most one.
std::vector<std::vector<std::size_t>> stratified_folds(std::span<const Sample> data,
                                                       std::size_t k, std::uint64_t seed);

struct CvReport {
    std::vector<FoldResult> folds;
    Metrics mean; // counts summed, metric means averaged over folds
};

// Trains a fresh network per fold (factory) with a fold-derived seed.
template <typename NetFactory>
CvReport kfold_cv(std::span<const Sample> data, std::size_t k, const TrainConfig& cfg,
                  NetFactory make_net);

CvReport kfold_cv_entropy(std::span<const Sample> data, std::size_t k, std::uint64_t seed,
                          std::vector<EntropyRange>* fitted = nullptr);

void write_metrics_report(std::ostream& out, const CvReport& report);
void write_learning_curve(std::ostream& out, const LearningCurve& curve);

// ---- template implementation ----

template <typename NetFactory>
CvReport kfold_cv(std::span<const Sample> data, std::size_t k, const TrainConfig& cfg,
                  NetFactory make_net)
{
    const auto folds = stratified_folds(data, k, cfg.seed);
    CvReport report;
    for (std::size_t f = 0; f < folds.size(); ++f) {
        std::vector<Sample> train_set, test_set;
        for (std::size_t g = 0; g < folds.size(); ++g)
            for (auto idx : folds[g])
                (g == f ? test_set : train_set).push_back(data[idx]);

        nn::Network net = make_net();
        TrainConfig fold_cfg = cfg;
        fold_cfg.seed = cfg.seed + 0x9E3779B97F4A7C15ull * (f + 1);
        net.init_params(fold_cfg.seed);

        FoldResult result;
        result.curve = train(net, train_set, test_set, fold_cfg);
        const auto predictions = predict(net, test_set);
        std::vector<Label> truths;
        truths.reserve(test_set.size());
        for (const auto& s : test_set)
            truths.push_back(s.label);
        result.metrics = evaluate(predictions, truths);
        report.folds.push_back(std::move(result));
    }

    for (const auto& fold : report.folds) {
        report.mean.tp += fold.metrics.tp;
        report.mean.fp += fold.metrics.fp;
        report.mean.fn += fold.metrics.fn;
        report.mean.tn += fold.metrics.tn;
        report.mean.precision += fold.metrics.precision;
        report.mean.recall += fold.metrics.recall;
        report.mean.f_measure += fold.metrics.f_measure;
    }
    const auto n = static_cast<double>(report.folds.size());
    report.mean.precision /= n;
    report.mean.recall /= n;
    report.mean.f_measure /= n;
    return report;
}

} // namespace oglasses::classify
