#include "oglasses/classifiers.hpp"
#include "oglasses/dataset.hpp"
#include "oglasses/elf_extract.hpp"
#include "oglasses/nn.hpp"
#include "oglasses/visualize.hpp"
#include "oglasses/x86_decoder.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <thread>

namespace {

constexpr std::uint64_t kDefaultSeed = 1; // documented default for reproducible runs

constexpr int kExitIoError = 3;
constexpr int kExitValidationError = 4;

std::vector<std::uint8_t> read_file(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw std::runtime_error("cannot open " + path);
    return { std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>() };
}

struct TrainFlags {
    std::uint64_t seed = kDefaultSeed;
    float learning_rate = 0.001f;
    std::size_t batch_size = 100;
    std::size_t epochs = 200;

    oglasses::classify::TrainConfig to_config() const
    {
        oglasses::classify::TrainConfig cfg;
        cfg.seed = seed;
        cfg.learning_rate = learning_rate;
        cfg.batch_size = batch_size;
        cfg.epochs = epochs;
        return cfg;
    }
};

void add_train_flags(CLI::App* cmd, TrainFlags& flags)
{
    cmd->add_option("--seed", flags.seed, "Random seed");
    cmd->add_option("--learning-rate", flags.learning_rate, "SGD learning rate")
        ->check(CLI::PositiveNumber);
    cmd->add_option("--batch-size", flags.batch_size, "Mini-batch size")
        ->check(CLI::PositiveNumber);
    cmd->add_option("--epochs", flags.epochs, "Training epochs");
}

// Dataset building, training and evaluation are single-threaded and already
// bit-reproducible; the flag is accepted for a uniform interface.
void add_deterministic_flag(CLI::App* cmd, bool& flag)
{
    cmd->add_flag("--deterministic", flag, "Single-threaded, bit-reproducible execution");
}

int cmd_build_dataset(const std::string& manifest_path, const std::string& out_blocks,
                      const std::string& out_code, std::uint64_t seed)
{
    using namespace oglasses;
    const auto manifest = dataset::read_manifest(manifest_path);
    const auto corpus = dataset::build_corpus(manifest, seed);
    for (const auto& w : corpus.stats.warnings)
        std::cerr << "warning: " << w << '\n';

    dataset::write_dataset(corpus.blocks, dataset::DatasetKind::block, seed, out_blocks);
    dataset::write_dataset(corpus.code, dataset::DatasetKind::code, seed, out_code);

    std::cout << "category\tblocks\tcode\n";
    std::cout << "Program\t" << corpus.stats.program_blocks << '\t' << corpus.stats.program_code << '\n';
    std::cout << "Others\t" << corpus.stats.others_blocks << '\t' << corpus.stats.others_code << '\n';
    std::cout << "Total\t" << corpus.blocks.size() << '\t' << corpus.code.size() << '\n';
    std::cerr << "files used: " << corpus.stats.files_used
              << ", skipped: " << corpus.stats.files_skipped << '\n';
    return 0;
}

int cmd_train(const std::string& dataset_path, const std::string& model_kind,
              const std::string& out_model, const std::string& out_curve, const TrainFlags& flags)
{
    using namespace oglasses;
    const auto ds = dataset::read_dataset(dataset_path);
    auto net = (model_kind == "cnn") ? classify::build_cnn() : classify::build_mlp();
    net.init_params(flags.seed);

    const auto curve = classify::train(net, ds.samples, {}, flags.to_config());
    net.save(out_model);
    if (!out_curve.empty()) {
        std::ofstream out(out_curve);
        if (!out)
            throw std::runtime_error("cannot open " + out_curve + " for writing");
        classify::write_learning_curve(out, curve);
    }
    if (!curve.train_error.empty())
        std::cerr << "final train error: " << curve.train_error.back() << '\n';
    return 0;
}

int cmd_eval(const std::string& dataset_path, const std::string& method, std::size_t kfold,
             const TrainFlags& flags)
{
    using namespace oglasses;
    const auto ds = dataset::read_dataset(dataset_path);

    classify::CvReport report;
    if (method == "entropy") {
        std::vector<classify::EntropyRange> ranges;
        report = classify::kfold_cv_entropy(ds.samples, kfold, flags.seed, &ranges);
        for (std::size_t f = 0; f < ranges.size(); ++f)
            std::cout << "range" << f << '\t' << ranges[f].low << '\t' << ranges[f].high << '\n';
    } else {
        auto factory = (method == "cnn") ? classify::build_cnn : classify::build_mlp;
        report = classify::kfold_cv(std::span(ds.samples), kfold, flags.to_config(), factory);
    }
    classify::write_metrics_report(std::cout, report);
    return 0;
}

int cmd_scan(const std::string& input_path, const std::string& method,
             const std::string& model_path, double range_low, double range_high,
             const std::string& out_image, const std::string& format, std::size_t width,
             const std::string& out_report, const std::string& out_grayscale,
             const std::string& out_bitimage, const std::string& out_entropy_map,
             bool deterministic)
{
    using namespace oglasses;
    const auto file = read_file(input_path);
    const auto fmt = (format == "png") ? vis::ImageFormat::png : vis::ImageFormat::ppm;
    const std::size_t threads = deterministic
        ? 1
        : std::max<std::size_t>(1, std::thread::hardware_concurrency());

    vis::ScanReport report;
    if (method == "entropy") {
        report = vis::scan_entropy(file, { range_low, range_high });
    } else {
        if (model_path.empty())
            throw std::invalid_argument("scan: --model is required for mlp/cnn");
        auto net = nn::Network::load(model_path);
        report = (method == "cnn") ? vis::scan_cnn(file, net, threads)
                                   : vis::scan_mlp(file, net, threads);
    }

    vis::write_image(vis::render_classification(report, width), out_image, fmt);
    if (!out_report.empty()) {
        std::ofstream out(out_report);
        if (!out)
            throw std::runtime_error("cannot open " + out_report + " for writing");
        vis::write_scan_report(out, report);
    }
    if (!out_grayscale.empty())
        vis::write_image(vis::render_grayscale(file, width), out_grayscale, fmt);
    if (!out_bitimage.empty())
        vis::write_image(vis::render_bitimage(file, width), out_bitimage, fmt);
    if (!out_entropy_map.empty())
        vis::write_image(vis::render_structural_entropy(file, 256, width), out_entropy_map, fmt);

    std::size_t program = 0, others = 0, undecodable = 0;
    for (auto d : report.decisions) {
        if (d == vis::Decision::Program)
            ++program;
        else if (d == vis::Decision::Others)
            ++others;
        else
            ++undecodable;
    }
    std::cout << "windows\t" << report.decisions.size() << "\nprogram\t" << program
              << "\nothers\t" << others << "\nundecodable\t" << undecodable << '\n';
    return 0;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{ "x86 code fragment classifier and binary visualizer" };
    app.require_subcommand(1);

    // build-dataset
    std::string manifest_path, out_blocks, out_code;
    std::uint64_t build_seed = kDefaultSeed;
    auto* build = app.add_subcommand("build-dataset", "Build block and code datasets from a corpus manifest");
    build->add_option("--manifest", manifest_path, "Manifest: <category>\\t<source-tag>\\t<path> per line")
        ->required();
    build->add_option("--out-blocks", out_blocks, "Output path for the block dataset")->required();
    build->add_option("--out-code", out_code, "Output path for the code dataset")->required();
    build->add_option("--seed", build_seed, "Master seed");
    bool build_deterministic = false;
    add_deterministic_flag(build, build_deterministic);

    // train
    std::string train_dataset, train_kind = "cnn", train_out, train_curve;
    TrainFlags train_flags;
    auto* train = app.add_subcommand("train", "Train an MLP or 1d-CNN on a dataset");
    train->add_option("--dataset", train_dataset, "Input dataset file")->required();
    train->add_option("--model", train_kind, "Model kind")
        ->check(CLI::IsMember({ "mlp", "cnn" }));
    train->add_option("--out", train_out, "Output model file")->required();
    train->add_option("--curve", train_curve, "Learning curve output (epoch\\ttrain_err)");
    add_train_flags(train, train_flags);
    bool train_deterministic = false;
    add_deterministic_flag(train, train_deterministic);

    // eval
    std::string eval_dataset, eval_method = "cnn";
    std::size_t eval_kfold = 10;
    TrainFlags eval_flags;
    auto* eval = app.add_subcommand("eval", "k-fold cross-validation metrics");
    eval->add_option("--dataset", eval_dataset, "Input dataset file")->required();
    eval->add_option("--method", eval_method, "Classifier")
        ->check(CLI::IsMember({ "entropy", "mlp", "cnn" }));
    eval->add_option("--kfold", eval_kfold, "Number of folds");
    add_train_flags(eval, eval_flags);
    bool eval_deterministic = false;
    add_deterministic_flag(eval, eval_deterministic);

    // scan
    std::string scan_input, scan_method = "cnn", scan_model, scan_out, scan_format = "ppm";
    std::string scan_report_path, scan_grayscale, scan_bitimage, scan_entropy_map;
    double scan_low = 0.408, scan_high = 0.753;
    std::size_t scan_width = oglasses::vis::kDefaultImageWidth;
    bool deterministic = false;
    auto* scan = app.add_subcommand("scan", "Classify every window of a file and render images");
    scan->add_option("--input", scan_input, "Target file")->required();
    scan->add_option("--method", scan_method, "Classifier")
        ->check(CLI::IsMember({ "entropy", "mlp", "cnn" }));
    scan->add_option("--model", scan_model, "Trained model file (mlp/cnn)");
    scan->add_option("--range-low", scan_low, "Entropy range low bound");
    scan->add_option("--range-high", scan_high, "Entropy range high bound");
    scan->add_option("--out", scan_out, "Classification overlay image")->required();
    scan->add_option("--format", scan_format, "Image format")
        ->check(CLI::IsMember({ "ppm", "png" }));
    scan->add_option("--width", scan_width, "Image width in pixels")->check(CLI::PositiveNumber);
    scan->add_option("--report", scan_report_path, "Per-offset decision text output");
    scan->add_option("--grayscale", scan_grayscale, "Also render a grayscale image");
    scan->add_option("--bitimage", scan_bitimage, "Also render a Stirling bit-image");
    scan->add_option("--entropy-map", scan_entropy_map, "Also render a structural-entropy image");
    scan->add_flag("--deterministic", deterministic, "Single-threaded, bit-reproducible execution");

    CLI11_PARSE(app, argc, argv);

    try {
        if (build->parsed())
            return cmd_build_dataset(manifest_path, out_blocks, out_code, build_seed);
        if (train->parsed())
            return cmd_train(train_dataset, train_kind, train_out, train_curve, train_flags);
        if (eval->parsed())
            return cmd_eval(eval_dataset, eval_method, eval_kfold, eval_flags);
        if (scan->parsed())
            return cmd_scan(scan_input, scan_method, scan_model, scan_low, scan_high, scan_out,
                            scan_format, scan_width, scan_report_path, scan_grayscale,
                            scan_bitimage, scan_entropy_map, deterministic);
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitValidationError;
    } catch (const oglasses::nn::ShapeError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitValidationError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitIoError;
    }
    return 0;
}
