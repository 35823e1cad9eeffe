#include "oglasses/classifiers.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <random>
#include <stdexcept>

namespace oglasses::classify {

namespace {

constexpr int kGridSteps = 1000; // grid values i / 1000 for i in [0, 1000]

int floor_grid_index(double h)
{
    int i = static_cast<int>(std::floor(h * kGridSteps + 1e-9));
    return std::clamp(i, 0, kGridSteps);
}

int ceil_grid_index(double h)
{
    int i = static_cast<int>(std::ceil(h * kGridSteps - 1e-9));
    return std::clamp(i, 0, kGridSteps);
}

} // namespace

double entropy_rate(std::span<const std::uint8_t> block)
{
    if (block.size() != dataset::kBlockSize)
        throw std::invalid_argument("entropy_rate: block must be exactly 256 bytes");
    std::array<std::uint32_t, 256> counts{};
    for (auto b : block)
        counts[b]++;
    double h = 0.0;
    for (auto c : counts) {
        if (c == 0)
            continue;
        const double p = static_cast<double>(c) / static_cast<double>(block.size());
        h -= p * std::log2(p);
    }
    return h / 8.0;
}

EntropyRange fit_entropy_range(const std::vector<Sample>& train)
{
    std::size_t total_program = 0, total_others = 0;
    std::vector<std::pair<int, int>> program_idx, others_idx; // (floor, ceil) grid indices
    for (const auto& s : train) {
        const double h = entropy_rate(s.bytes);
        const auto fc = std::make_pair(floor_grid_index(h), ceil_grid_index(h));
        if (s.label == Label::Program) {
            program_idx.push_back(fc);
            ++total_program;
        } else {
            others_idx.push_back(fc);
            ++total_others;
        }
    }
    if (total_program == 0 || total_others == 0)
        throw std::invalid_argument("fit_entropy_range: both labels must be present");

    EntropyRange best{ 0.0, 0.0 };
    double best_f = -1.0;
    std::vector<std::size_t> in_program(kGridSteps + 1), in_others(kGridSteps + 1);
    for (int low = 0; low <= kGridSteps; ++low) {
        // Cumulative counts over the high bound, restricted to blocks whose
        // entropy clears the low bound (floor index >= low).
        std::fill(in_program.begin(), in_program.end(), 0);
        std::fill(in_others.begin(), in_others.end(), 0);
        for (auto [f, c] : program_idx)
            if (f >= low)
                in_program[c]++;
        for (auto [f, c] : others_idx)
            if (f >= low)
                in_others[c]++;
        std::partial_sum(in_program.begin(), in_program.end(), in_program.begin());
        std::partial_sum(in_others.begin(), in_others.end(), in_others.begin());

        for (int high = low; high <= kGridSteps; ++high) {
            const std::size_t tp = in_program[high];
            const std::size_t fp = in_others[high];
            const std::size_t fn = total_program - tp;
            const auto m = metrics_from_counts(tp, fp, fn, total_others - fp);
            if (m.f_measure > best_f) {
                best_f = m.f_measure;
                best = { low / static_cast<double>(kGridSteps),
                         high / static_cast<double>(kGridSteps) };
            }
        }
    }
    return best;
}

Label classify_entropy(std::span<const std::uint8_t> block, const EntropyRange& range)
{
    const double h = entropy_rate(block);
    return (h >= range.low && h <= range.high) ? Label::Program : Label::Others;
}

Metrics metrics_from_counts(std::size_t tp, std::size_t fp, std::size_t fn, std::size_t tn)
{
    Metrics m;
    m.tp = tp;
    m.fp = fp;
    m.fn = fn;
    m.tn = tn;
    m.precision = (tp + fp) ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
    m.recall = (tp + fn) ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
    m.f_measure = (m.precision + m.recall > 0.0)
        ? 2.0 * m.precision * m.recall / (m.precision + m.recall)
        : 0.0;
    return m;
}

Metrics evaluate(const std::vector<Label>& predictions, const std::vector<Label>& truths)
{
    if (predictions.empty())
        throw std::invalid_argument("evaluate: empty input");
    if (predictions.size() != truths.size())
        throw std::invalid_argument("evaluate: prediction/truth size mismatch");
    std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        const bool pred = predictions[i] == Label::Program;
        const bool truth = truths[i] == Label::Program;
        if (pred && truth)
            ++tp;
        else if (pred && !truth)
            ++fp;
        else if (!pred && truth)
            ++fn;
        else
            ++tn;
    }
    return metrics_from_counts(tp, fp, fn, tn);
}

nn::Network build_cnn()
{
    using namespace oglasses::nn;
    Network net;
    net.add(std::make_unique<Conv1d>(2048, 1, 128, 128, 96)); // bit filters, one per instruction slot
    net.add(std::make_unique<Relu>(16 * 96));
    net.add(std::make_unique<Conv1d>(16, 96, 2, 1, 256)); // adjacent-instruction filters
    net.add(std::make_unique<Relu>(15 * 256));
    net.add(std::make_unique<BatchNorm>(15 * 256));
    net.add(std::make_unique<FullyConnected>(3840, 400));
    net.add(std::make_unique<Relu>(400));
    net.add(std::make_unique<BatchNorm>(400));
    net.add(std::make_unique<FullyConnected>(400, 400));
    net.add(std::make_unique<Relu>(400));
    net.add(std::make_unique<FullyConnected>(400, 2));
    net.add(std::make_unique<Softmax>(2));
    return net;
}

nn::Network build_mlp()
{
    using namespace oglasses::nn;
    Network net;
    net.add(std::make_unique<BatchNorm>(2048));
    net.add(std::make_unique<FullyConnected>(2048, 400));
    net.add(std::make_unique<Relu>(400));
    net.add(std::make_unique<BatchNorm>(400));
    net.add(std::make_unique<FullyConnected>(400, 400));
    net.add(std::make_unique<Relu>(400));
    net.add(std::make_unique<FullyConnected>(400, 2));
    net.add(std::make_unique<Softmax>(2));
    return net;
}

nn::Matrix to_bits(std::span<const Sample> samples)
{
    nn::Matrix m(static_cast<Eigen::Index>(samples.size()), 2048);
    for (std::size_t i = 0; i < samples.size(); ++i)
        for (std::size_t byte = 0; byte < dataset::kBlockSize; ++byte)
            for (int bit = 0; bit < 8; ++bit)
                m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(byte * 8 + bit)) =
                    static_cast<float>((samples[i].bytes[byte] >> (7 - bit)) & 1);
    return m;
}

nn::Matrix to_targets(std::span<const Sample> samples)
{
    nn::Matrix t = nn::Matrix::Zero(static_cast<Eigen::Index>(samples.size()), 2);
    for (std::size_t i = 0; i < samples.size(); ++i)
        t(static_cast<Eigen::Index>(i), samples[i].label == Label::Program ? 1 : 0) = 1.0f;
    return t;
}

std::vector<Label> predict(nn::Network& net, std::span<const Sample> samples, std::size_t batch)
{
    std::vector<Label> out;
    out.reserve(samples.size());
    for (std::size_t start = 0; start < samples.size(); start += batch) {
        const std::size_t n = std::min(batch, samples.size() - start);
        const auto x = to_bits(samples.subspan(start, n));
        const auto y = net.forward(x, nn::Mode::infer);
        for (std::size_t i = 0; i < n; ++i)
            out.push_back(y(static_cast<Eigen::Index>(i), 1) > y(static_cast<Eigen::Index>(i), 0)
                              ? Label::Program
                              : Label::Others);
    }
    return out;
}

namespace {

double dataset_error(nn::Network& net, std::span<const Sample> set, std::size_t batch = 512)
{
    double total = 0.0;
    for (std::size_t start = 0; start < set.size(); start += batch) {
        const std::size_t n = std::min(batch, set.size() - start);
        const auto x = to_bits(set.subspan(start, n));
        const auto t = to_targets(set.subspan(start, n));
        const auto y = net.forward(x, nn::Mode::infer);
        total += static_cast<double>(nn::cross_entropy(y, t)) * static_cast<double>(n);
    }
    return total / static_cast<double>(set.size());
}

} // namespace

LearningCurve train(nn::Network& net, std::span<const Sample> train_set,
                    std::span<const Sample> test_set, const TrainConfig& cfg)
{
    if (train_set.empty())
        throw std::invalid_argument("train: empty training set");
    if (cfg.learning_rate <= 0.0f || cfg.batch_size == 0)
        throw std::invalid_argument("train: learning rate must be positive, batch size >= 1");

    LearningCurve curve;
    std::mt19937_64 rng(cfg.seed);
    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), 0);
    std::vector<Sample> batch_samples;

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double epoch_loss = 0.0;
        std::size_t processed = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t n = std::min(cfg.batch_size, order.size() - start);
            // batch statistics are undefined for a single sample; drop a
            // trailing remainder of one
            if (n == 1 && order.size() > 1)
                break;
            batch_samples.clear();
            for (std::size_t i = 0; i < n; ++i)
                batch_samples.push_back(train_set[order[start + i]]);
            const auto x = to_bits(batch_samples);
            const auto t = to_targets(batch_samples);

            const auto y = net.forward(x, nn::Mode::train);
            const float loss = nn::cross_entropy(y, t);
            if (!std::isfinite(loss))
                throw std::runtime_error("train: loss diverged (non-finite) at epoch "
                                         + std::to_string(epoch));
            epoch_loss += static_cast<double>(loss) * static_cast<double>(n);
            processed += n;

            net.backward(nn::cross_entropy_grad(y, t));
            net.sgd_step(cfg.learning_rate);
        }
        curve.train_error.push_back(epoch_loss / static_cast<double>(processed));
        if (!test_set.empty())
            curve.test_error.push_back(dataset_error(net, test_set));
    }
    return curve;
}

std::vector<std::vector<std::size_t>> stratified_folds(std::span<const Sample> data,
                                                       std::size_t k, std::uint64_t seed)
{
    if (k == 0 || k > data.size())
        throw std::invalid_argument("stratified_folds: need 1 <= k <= data size");
    std::vector<std::size_t> program, others;
    for (std::size_t i = 0; i < data.size(); ++i)
        (data[i].label == Label::Program ? program : others).push_back(i);

    std::mt19937_64 rng(seed ^ 0xA5A5A5A5A5A5A5A5ull);
    std::shuffle(program.begin(), program.end(), rng);
    std::shuffle(others.begin(), others.end(), rng);

    std::vector<std::vector<std::size_t>> folds(k);
    std::size_t cursor = 0; // continues across classes so overall sizes differ by <= 1
    for (const auto* cls : { &program, &others })
        for (auto idx : *cls)
            folds[cursor++ % k].push_back(idx);
    return folds;
}

CvReport kfold_cv_entropy(std::span<const Sample> data, std::size_t k, std::uint64_t seed,
                          std::vector<EntropyRange>* fitted)
{
    const auto folds = stratified_folds(data, k, seed);
    CvReport report;
    for (std::size_t f = 0; f < folds.size(); ++f) {
        std::vector<Sample> train_set, test_set;
        for (std::size_t g = 0; g < folds.size(); ++g)
            for (auto idx : folds[g])
                (g == f ? test_set : train_set).push_back(data[idx]);

        const auto range = fit_entropy_range(train_set);
        if (fitted)
            fitted->push_back(range);
        std::vector<Label> predictions, truths;
        for (const auto& s : test_set) {
            predictions.push_back(classify_entropy(s.bytes, range));
            truths.push_back(s.label);
        }
        FoldResult result;
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

void write_metrics_report(std::ostream& out, const CvReport& report)
{
    out << std::setprecision(6) << std::fixed;
    for (std::size_t f = 0; f < report.folds.size(); ++f) {
        const auto& m = report.folds[f].metrics;
        out << "fold" << f << '\t' << m.tp << '\t' << m.fp << '\t' << m.fn << '\t' << m.tn
            << '\t' << m.precision << '\t' << m.recall << '\t' << m.f_measure << '\n';
    }
    const auto& m = report.mean;
    out << "mean" << '\t' << m.tp << '\t' << m.fp << '\t' << m.fn << '\t' << m.tn << '\t'
        << m.precision << '\t' << m.recall << '\t' << m.f_measure << '\n';
}

void write_learning_curve(std::ostream& out, const LearningCurve& curve)
{
    out << std::setprecision(6) << std::fixed;
    for (std::size_t e = 0; e < curve.train_error.size(); ++e) {
        out << e << '\t' << curve.train_error[e];
        if (e < curve.test_error.size())
            out << '\t' << curve.test_error[e];
        out << '\n';
    }
}

} // namespace oglasses::classify
