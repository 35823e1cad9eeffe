// Acceptance suite. Prints one [PASS]/[FAIL] line per criterion and exits
// nonzero when any criterion fails.
//
// The neural-network scale test defaults to a reduced smoke variant; set
// OGLASSES_ACCEPT_FULL=1 for the full-size run (hours).

#include "oglasses/classifiers.hpp"
#include "oglasses/dataset.hpp"
#include "oglasses/elf_extract.hpp"
#include "oglasses/nn.hpp"
#include "oglasses/visualize.hpp"
#include "oglasses/x86_decoder.hpp"

#include <zlib.h>

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <regex>
#include <set>
#include <sstream>
#include <thread>

using namespace oglasses;
namespace fs = std::filesystem;

namespace {

fs::path g_work;

std::vector<std::uint8_t> read_file(const fs::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw std::runtime_error("cannot open " + path.string());
    return { std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>() };
}

void write_file(const fs::path& path, const std::vector<std::uint8_t>& data)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(reinterpret_cast<const char*>(data.data()),
              static_cast<std::streamsize>(data.size()));
    if (!out)
        throw std::runtime_error("write failed for " + path.string());
}

int run(const std::string& cmd)
{
    return std::system(cmd.c_str());
}

double seconds_since(std::chrono::steady_clock::time_point start)
{
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

// ---------------------------------------------------------------- C corpus

// Deterministic C translation units: integer mixing, float math, hashing,
// switch tables. Compiled for i386 they supply realistic 32-bit code.
std::string generate_c_source(std::uint64_t seed, int functions)
{
    std::mt19937_64 rng(seed);
    auto c32 = [&] { return static_cast<std::uint32_t>(rng()) | 1u; };
    std::ostringstream out;
    // no libc headers: the i386 cross target has no 32-bit sysroot installed
    out << "typedef signed int int32_t;\n"
        << "typedef unsigned int uint32_t;\n"
        << "typedef unsigned short uint16_t;\n"
        << "typedef unsigned char uint8_t;\n\n";
    for (int f = 0; f < functions; ++f) {
        switch (rng() % 5) {
        case 0:
            out << "int32_t fn" << seed % 1000 << "_" << f << "(int32_t a, int32_t b) {\n"
                << "  int32_t x = a * " << (c32() % 97) << " + (b ^ " << c32() << ");\n"
                << "  for (int32_t j = 0; j < (a & 31); ++j) {\n"
                << "    x += (x << " << (1 + rng() % 7) << ") ^ (b >> " << (1 + rng() % 7)
                << ");\n"
                << "    x ^= j * " << (c32() % 1009) << ";\n"
                << "  }\n"
                << "  if (x > b) x -= a * " << (c32() % 61) << "; else x += b / (a | 1);\n"
                << "  return x;\n}\n\n";
            break;
        case 1:
            out << "double fn" << seed % 1000 << "_" << f << "(double a, double b) {\n"
                << "  double x = a * " << (1.0 + rng() % 9) << ".5 + b;\n"
                << "  for (int j = 0; j < " << (4 + rng() % 24) << "; ++j)\n"
                << "    x = x * 0.9" << (rng() % 9) << " + (double)j * b - a / (x * x + 1.0);\n"
                << "  return x + a * b;\n}\n\n";
            break;
        case 2:
            out << "uint32_t fn" << seed % 1000 << "_" << f
                << "(const uint8_t *p, uint32_t n) {\n"
                << "  uint32_t h = " << c32() << "u;\n"
                << "  for (uint32_t j = 0; j < n; ++j) {\n"
                << "    h ^= p[j];\n"
                << "    h *= " << (16777619u + static_cast<std::uint32_t>(rng() % 1024) * 2)
                << "u;\n"
                << "    h = (h << " << (1 + rng() % 15) << ") | (h >> " << (32 - 1 - rng() % 15)
                << ");\n"
                << "  }\n"
                << "  return h;\n}\n\n";
            break;
        case 3: {
            out << "int32_t fn" << seed % 1000 << "_" << f << "(int32_t a) {\n"
                << "  switch (a & 7) {\n";
            for (int k = 0; k < 7; ++k)
                out << "  case " << k << ": return a " << "*^+-&|%"[k % 7] << " "
                    << (c32() % 997 + 1) << ";\n";
            out << "  default: return a - " << (c32() % 31) << ";\n  }\n}\n\n";
            break;
        }
        default:
            out << "uint16_t fn" << seed % 1000 << "_" << f << "(uint16_t a, uint16_t b) {\n"
                << "  uint16_t x = (uint16_t)((a * " << (c32() % 251)
                << ") ^ (b >> " << (1 + rng() % 7) << "));\n"
                << "  x += (uint16_t)(a / (uint16_t)(b | 1));\n"
                << "  return (uint16_t)(x ^ (uint16_t)(x << 3));\n}\n\n";
            break;
        }
    }
    return out.str();
}

struct CompiledObject {
    fs::path path;
    std::vector<std::uint8_t> text;
};

CompiledObject compile_i386(std::uint64_t seed, int functions, const std::string& opt,
                            const std::string& name)
{
    const fs::path src = g_work / (name + ".c");
    const fs::path obj = g_work / (name + ".o");
    {
        std::ofstream out(src);
        out << generate_c_source(seed, functions);
    }
    const std::string cmd = "clang -target i386-unknown-linux-gnu -c " + opt + " -o "
        + obj.string() + " " + src.string() + " 2>/dev/null";
    if (run(cmd) != 0)
        throw std::runtime_error("clang failed for " + src.string());
    CompiledObject c;
    c.path = obj;
    c.text = elf::extract_code(read_file(obj), elf::SourceKind::elf_object);
    return c;
}

// ------------------------------------------------------------- documents

void append_text(std::vector<std::uint8_t>& out, std::mt19937_64& rng, std::size_t n)
{
    static const char* kWords[] = { "report", "quarterly", "figure", "analysis", "the",
                                    "values", "customer", "impact", "between", "revenue",
                                    "and", "summary", "growth", "model", "for", "table" };
    std::size_t emitted = 0;
    while (emitted < n) {
        const char* w = kWords[rng() % 16];
        for (const char* p = w; *p; ++p, ++emitted)
            out.push_back(static_cast<std::uint8_t>(*p));
        out.push_back((rng() % 12 == 0) ? '\n' : ' ');
        ++emitted;
    }
}

void append_xml(std::vector<std::uint8_t>& out, std::mt19937_64& rng, std::size_t n)
{
    std::size_t emitted = 0;
    while (emitted < n) {
        std::ostringstream tag;
        tag << "<w:r id=\"" << rng() % 10000 << "\" val=\"" << rng() % 100
            << "\"><w:t>cell" << rng() % 512 << "</w:t></w:r>";
        for (char c : tag.str()) {
            out.push_back(static_cast<std::uint8_t>(c));
            ++emitted;
        }
    }
}

void append_deflate(std::vector<std::uint8_t>& out, std::mt19937_64& rng, std::size_t n)
{
    // compress text so the stream looks like an OOXML/PDF payload
    std::vector<std::uint8_t> plain;
    append_text(plain, rng, n * 3);
    uLongf bound = compressBound(static_cast<uLong>(plain.size()));
    std::vector<std::uint8_t> compressed(bound);
    if (compress2(compressed.data(), &bound, plain.data(), static_cast<uLong>(plain.size()),
                  Z_BEST_COMPRESSION) != Z_OK)
        throw std::runtime_error("document generator: compression failed");
    compressed.resize(std::min<std::size_t>(bound, n));
    out.insert(out.end(), compressed.begin(), compressed.end());
}

// segment < 0 mixes all content kinds; 0..9 forces one (plain text files,
// pure XML, raw deflate streams and the like exist as whole files too, and
// consecutive-window scans see them undiluted)
std::vector<std::uint8_t> generate_document(std::uint64_t seed, std::size_t target,
                                            int segment = -1)
{
    std::mt19937_64 rng(seed);
    std::vector<std::uint8_t> out;
    out.reserve(target);
    while (out.size() < target) {
        const std::size_t n = 512 + rng() % 3584;
        switch (segment < 0 ? rng() % 10 : static_cast<std::uint64_t>(segment)) {
        case 0:
        case 1:
            append_xml(out, rng, n);
            break;
        case 2:
            out.insert(out.end(), n, 0x00); // null padding
            break;
        case 3: { // UTF-16-style text
            std::vector<std::uint8_t> ascii;
            append_text(ascii, rng, n / 2);
            for (auto c : ascii) {
                out.push_back(c);
                out.push_back(0x00);
            }
            break;
        }
        case 4:
        case 5:
            append_text(out, rng, n);
            break;
        default: // compressed payloads dominate, like zipped containers
            append_deflate(out, rng, n);
            break;
        }
    }
    out.resize(target);
    return out;
}

// --------------------------------------------------------------- criteria

bool criterion_shapes()
{
    auto cnn = classify::build_cnn();
    auto* conv1 = dynamic_cast<nn::Conv1d*>(cnn.layers().at(0).get());
    auto* conv2 = dynamic_cast<nn::Conv1d*>(cnn.layers().at(2).get());
    if (!conv1 || !conv2)
        return false;
    const bool ok = conv1->out_width() == 16 && conv1->out_depth() == 96
        && conv2->out_width() == 15 && conv2->out_depth() == 256 && cnn.input_width() == 2048
        && cnn.output_width() == 2;
    std::cout << "  conv1 " << conv1->out_width() << "x" << conv1->out_depth() << ", conv2 "
              << conv2->out_width() << "x" << conv2->out_depth() << ", output "
              << cnn.output_width() << "\n";
    return ok;
}

// double-precision loss over packed [input..., params...] values
using RefLoss = std::function<double(const std::vector<double>&)>;

bool fd_check(nn::Layer& layer, const nn::Matrix& x, const RefLoss& ref,
              std::size_t* checked, double* worst)
{
    // analytic gradients from the float implementation
    const nn::Matrix y = layer.forward(x, nn::Mode::train);
    nn::Matrix lw(y.rows(), y.cols());
    std::mt19937_64 wrng(4242);
    std::uniform_real_distribution<double> wdist(-1.0, 1.0);
    for (Eigen::Index i = 0; i < lw.rows(); ++i)
        for (Eigen::Index j = 0; j < lw.cols(); ++j)
            lw(i, j) = static_cast<float>(wdist(wrng));
    layer.forward(x, nn::Mode::train);
    const nn::Matrix dx = layer.backward(lw);

    std::vector<double> pack;
    std::vector<float> analytic;
    for (Eigen::Index i = 0; i < x.rows(); ++i)
        for (Eigen::Index j = 0; j < x.cols(); ++j) {
            pack.push_back(x(i, j));
            analytic.push_back(dx(i, j));
        }
    for (auto view : layer.params())
        for (std::size_t k = 0; k < view.size; ++k) {
            pack.push_back(view.values[k]);
            analytic.push_back(view.grads[k]);
        }

    bool ok = true;
    std::vector<double> probe = pack;
    for (std::size_t i = 0; i < pack.size(); ++i) {
        const double eps = 1e-5 * std::max(1.0, std::abs(pack[i]));
        probe[i] = pack[i] + eps;
        const double up = ref(probe);
        probe[i] = pack[i] - eps;
        const double down = ref(probe);
        probe[i] = pack[i];
        const double numeric = (up - down) / (2.0 * eps);
        const double a = analytic[i];
        const double err = std::abs(a - numeric);
        const double rel = err / std::max({ std::abs(a), std::abs(numeric), 1e-2 });
        *worst = std::max(*worst, rel);
        if (err > 1e-3 * std::max(std::abs(a), std::abs(numeric)) && err > 1e-5)
            ok = false;
        ++*checked;
    }
    return ok;
}

std::vector<double> ref_loss_weights(std::size_t n)
{
    std::mt19937_64 rng(4242);
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    std::vector<double> w(n);
    for (auto& v : w)
        v = static_cast<double>(static_cast<float>(dist(rng))); // same rounding as fd_check
    return w;
}

nn::Matrix random_input(std::size_t rows, std::size_t cols, std::mt19937_64& rng)
{
    std::uniform_real_distribution<float> dist(-1.0f, 1.0f);
    nn::Matrix x(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (Eigen::Index i = 0; i < x.rows(); ++i)
        for (Eigen::Index j = 0; j < x.cols(); ++j) {
            float v = dist(rng);
            while (std::abs(v) < 1e-2f) // keep clear of relu/abs kinks
                v = dist(rng);
            x(i, j) = v;
        }
    return x;
}

bool criterion_gradients()
{
    std::mt19937_64 rng(31337);
    std::size_t checked = 0;
    double worst = 0.0;
    bool ok = true;

    for (int trial = 0; trial < 4 && ok; ++trial) {
        const std::size_t B = 2 + rng() % 7;

        { // conv1d
            std::size_t W, K, S;
            do {
                W = 4 + rng() % 29;
                K = 1 + rng() % std::min<std::size_t>(W, 6);
                S = 1 + rng() % 4;
            } while ((W - K) % S != 0);
            const std::size_t D = 1 + rng() % 3, OD = 1 + rng() % 8;
            nn::Conv1d conv(W, D, K, S, OD);
            conv.weights() = random_input(OD, K * D, rng);
            conv.bias() = random_input(1, OD, rng).row(0).transpose();
            const auto x = random_input(B, W * D, rng);
            const std::size_t OW = conv.out_width();
            const auto lw = ref_loss_weights(B * OW * OD);
            const std::size_t nx = B * W * D, nw = OD * K * D;
            RefLoss ref = [=](const std::vector<double>& p) {
                double loss = 0.0;
                for (std::size_t b = 0; b < B; ++b)
                    for (std::size_t pos = 0; pos < OW; ++pos)
                        for (std::size_t d = 0; d < OD; ++d) {
                            double acc = p[nx + nw + d];
                            for (std::size_t k = 0; k < K; ++k)
                                for (std::size_t c = 0; c < D; ++c)
                                    acc += p[nx + d * K * D + k * D + c]
                                        * p[b * W * D + (pos * S + k) * D + c];
                            loss += lw[(b * OW + pos) * OD + d] * acc;
                        }
                return loss;
            };
            ok = fd_check(conv, x, ref, &checked, &worst) && ok;
        }

        { // fully connected
            const std::size_t I = 1 + rng() % 32, O = 1 + rng() % 32;
            nn::FullyConnected fc(I, O);
            fc.weights() = random_input(O, I, rng);
            fc.bias() = random_input(1, O, rng).row(0).transpose();
            const auto x = random_input(B, I, rng);
            const auto lw = ref_loss_weights(B * O);
            const std::size_t nx = B * I, nw = O * I;
            RefLoss ref = [=](const std::vector<double>& p) {
                double loss = 0.0;
                for (std::size_t b = 0; b < B; ++b)
                    for (std::size_t o = 0; o < O; ++o) {
                        double acc = p[nx + nw + o];
                        for (std::size_t i = 0; i < I; ++i)
                            acc += p[nx + o * I + i] * p[b * I + i];
                        loss += lw[b * O + o] * acc;
                    }
                return loss;
            };
            ok = fd_check(fc, x, ref, &checked, &worst) && ok;
        }

        { // batch norm (training statistics)
            const std::size_t F = 1 + rng() % 32;
            nn::BatchNorm bn(F);
            bn.scale() = random_input(1, F, rng).row(0).transpose();
            bn.shift() = random_input(1, F, rng).row(0).transpose();
            const auto x = random_input(B, F, rng);
            const auto lw = ref_loss_weights(B * F);
            const std::size_t nx = B * F;
            const double eps = bn.epsilon();
            RefLoss ref = [=](const std::vector<double>& p) {
                double loss = 0.0;
                for (std::size_t j = 0; j < F; ++j) {
                    double mean = 0.0;
                    for (std::size_t b = 0; b < B; ++b)
                        mean += p[b * F + j];
                    mean /= static_cast<double>(B);
                    double var = 0.0;
                    for (std::size_t b = 0; b < B; ++b)
                        var += (p[b * F + j] - mean) * (p[b * F + j] - mean);
                    var /= static_cast<double>(B);
                    const double ivar = 1.0 / std::sqrt(var + eps);
                    for (std::size_t b = 0; b < B; ++b) {
                        const double xhat = (p[b * F + j] - mean) * ivar;
                        loss += lw[b * F + j] * (p[nx + j] * xhat + p[nx + F + j]);
                    }
                }
                return loss;
            };
            ok = fd_check(bn, x, ref, &checked, &worst) && ok;
        }

        { // relu
            const std::size_t F = 1 + rng() % 32;
            nn::Relu relu(F);
            const auto x = random_input(B, F, rng);
            const auto lw = ref_loss_weights(B * F);
            RefLoss ref = [=](const std::vector<double>& p) {
                double loss = 0.0;
                for (std::size_t i = 0; i < B * F; ++i)
                    loss += lw[i] * std::max(0.0, p[i]);
                return loss;
            };
            ok = fd_check(relu, x, ref, &checked, &worst) && ok;
        }

        { // softmax
            const std::size_t F = 2 + rng() % 31;
            nn::Softmax sm(F);
            const auto x = random_input(B, F, rng);
            const auto lw = ref_loss_weights(B * F);
            RefLoss ref = [=](const std::vector<double>& p) {
                double loss = 0.0;
                for (std::size_t b = 0; b < B; ++b) {
                    double m = p[b * F];
                    for (std::size_t j = 1; j < F; ++j)
                        m = std::max(m, p[b * F + j]);
                    double sum = 0.0;
                    for (std::size_t j = 0; j < F; ++j)
                        sum += std::exp(p[b * F + j] - m);
                    for (std::size_t j = 0; j < F; ++j)
                        loss += lw[b * F + j] * std::exp(p[b * F + j] - m) / sum;
                }
                return loss;
            };
            ok = fd_check(sm, x, ref, &checked, &worst) && ok;
        }
    }

    std::cout << "  " << checked << " gradients checked, worst relative error " << worst << "\n";
    return ok;
}

bool criterion_entropy_oracle()
{
    std::mt19937_64 rng(2024);
    std::vector<classify::Sample> blocks;
    while (blocks.size() < 200) {
        classify::Sample s;
        if (rng() % 2) {
            const std::size_t alphabet = 1 + rng() % 256;
            for (auto& b : s.bytes)
                b = static_cast<std::uint8_t>(rng() % alphabet);
        } else {
            const std::size_t m = 1 + rng() % 255;
            const auto v1 = static_cast<std::uint8_t>(rng());
            auto v2 = static_cast<std::uint8_t>(rng());
            if (v2 == v1)
                ++v2;
            for (std::size_t i = 0; i < 256; ++i)
                s.bytes[i] = (i < m) ? v1 : v2;
        }
        s.label = (rng() % 2) ? classify::Label::Program : classify::Label::Others;
        // equality with the grid search is only well defined away from grid
        // boundaries
        const double h = classify::entropy_rate(s.bytes);
        const double dist = std::abs(h - std::round(h * 1000.0) / 1000.0);
        if (dist != 0.0 && dist <= 1e-6)
            continue;
        blocks.push_back(s);
    }
    if (std::none_of(blocks.begin(), blocks.end(),
                     [](const auto& s) { return s.label == classify::Label::Program; })
        || std::none_of(blocks.begin(), blocks.end(),
                        [](const auto& s) { return s.label == classify::Label::Others; }))
        return false;

    std::vector<double> h;
    std::vector<bool> is_program;
    for (const auto& s : blocks) {
        h.push_back(classify::entropy_rate(s.bytes));
        is_program.push_back(s.label == classify::Label::Program);
    }
    classify::EntropyRange brute{ 0.0, 0.0 };
    double best_f = -1.0;
    for (int low = 0; low <= 1000; ++low)
        for (int high = low; high <= 1000; ++high) {
            const double lo = low / 1000.0, hi = high / 1000.0;
            std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
            for (std::size_t i = 0; i < h.size(); ++i) {
                const bool in = h[i] >= lo && h[i] <= hi;
                if (in && is_program[i])
                    ++tp;
                else if (in)
                    ++fp;
                else if (is_program[i])
                    ++fn;
                else
                    ++tn;
            }
            const auto m = classify::metrics_from_counts(tp, fp, fn, tn);
            if (m.f_measure > best_f) {
                best_f = m.f_measure;
                brute = { lo, hi };
            }
        }

    const auto fitted = classify::fit_entropy_range(blocks);
    std::cout << "  fitted [" << fitted.low << ", " << fitted.high << "], brute force ["
              << brute.low << ", " << brute.high << "], F " << best_f << "\n";
    return fitted.low == brute.low && fitted.high == brute.high;
}

bool criterion_decoder(const std::vector<CompiledObject>& objects)
{
    const std::regex insn_line(R"(^\s+([0-9a-f]+):\t[0-9a-f ]+\t\S)");
    std::size_t total_bytes = 0, total_ref = 0, total_hit = 0;
    std::size_t sections = 0;
    for (const auto& obj : objects) {
        const fs::path dump = g_work / (obj.path.stem().string() + ".dump");
        if (run("objdump -d " + obj.path.string() + " > " + dump.string()) != 0)
            return false;

        std::set<std::size_t> ref;
        std::ifstream in(dump);
        std::string line;
        std::smatch m;
        while (std::getline(in, line))
            if (std::regex_search(line, m, insn_line))
                ref.insert(std::stoull(m[1].str(), nullptr, 16));
        if (ref.empty())
            return false;

        std::set<std::size_t> ours;
        std::size_t off = 0;
        for (const auto& instr : x86::decode_stream(obj.text)) {
            ours.insert(off);
            off += instr.length;
        }

        std::size_t hit = 0;
        for (auto o : ref)
            if (ours.count(o))
                ++hit;
        std::cout << "  " << obj.path.filename().string() << ": " << obj.text.size()
                  << " bytes, " << ref.size() << " reference offsets, agreement "
                  << static_cast<double>(hit) / static_cast<double>(ref.size()) << "\n";
        total_bytes += obj.text.size();
        total_ref += ref.size();
        total_hit += hit;
        ++sections;
    }
    const double agreement = static_cast<double>(total_hit) / static_cast<double>(total_ref);
    std::cout << "  total: " << sections << " sections, " << total_bytes
              << " bytes, agreement " << agreement << "\n";
    return sections >= 3 && total_bytes >= 50 * 1024 && agreement >= 0.99;
}

struct ScaleConfig {
    bool full;
    std::size_t per_class; // samples per category, per dataset kind
    std::size_t epochs;
    std::size_t kfold;
};

struct ScaleData {
    std::vector<classify::Sample> blocks;
    std::vector<classify::Sample> code;
};

ScaleData build_scale_data(const ScaleConfig& cfg, const std::vector<CompiledObject>& objects,
                           const std::vector<std::vector<std::uint8_t>>& documents)
{
    ScaleData data;
    const std::size_t per_obj = (cfg.per_class + objects.size() - 1) / objects.size();
    for (std::size_t i = 0; i < objects.size(); ++i) {
        auto rng = dataset::derive_file_rng(7, objects[i].path.string());
        auto blocks = dataset::sample_blocks(objects[i].text, per_obj,
                                             classify::Label::Program, rng);
        auto code = dataset::build_code_samples(objects[i].text, per_obj,
                                                classify::Label::Program, rng);
        data.blocks.insert(data.blocks.end(), blocks.begin(), blocks.end());
        data.code.insert(data.code.end(), code.begin(), code.end());
    }
    const std::size_t per_doc = (cfg.per_class + documents.size() - 1) / documents.size();
    for (std::size_t i = 0; i < documents.size(); ++i) {
        auto rng = dataset::derive_file_rng(7, "doc" + std::to_string(i));
        auto blocks = dataset::sample_blocks(documents[i], per_doc,
                                             classify::Label::Others, rng);
        auto code = dataset::build_code_samples(documents[i], per_doc,
                                                classify::Label::Others, rng);
        data.blocks.insert(data.blocks.end(), blocks.begin(), blocks.end());
        data.code.insert(data.code.end(), code.begin(), code.end());
    }
    return data;
}

struct ScaleResult {
    bool ok = false;
    classify::CvReport cnn; // kept for the over-fitting criterion
    std::size_t cnn_epochs = 0;
};

ScaleResult criterion_scale(const ScaleConfig& cfg, const ScaleData& data)
{
    const auto start = std::chrono::steady_clock::now();
    ScaleResult result;
    std::cout << "  " << (cfg.full ? "full" : "smoke") << " variant: "
              << data.code.size() << " code samples, " << data.blocks.size() << " blocks, "
              << cfg.kfold << "-fold, " << cfg.epochs << " epochs\n";

    classify::TrainConfig tc;
    tc.learning_rate = 0.001f;
    tc.batch_size = 100;
    tc.epochs = cfg.epochs;
    tc.seed = 7;

    std::vector<classify::EntropyRange> ranges;
    const auto entropy = classify::kfold_cv_entropy(data.blocks, cfg.kfold, tc.seed, &ranges);
    double range_lo = 1.0, range_hi = 0.0;
    bool all_overlap = true;
    for (const auto& r : ranges) {
        range_lo = std::min(range_lo, r.low);
        range_hi = std::max(range_hi, r.high);
        all_overlap = all_overlap && r.low <= 0.753 && r.high >= 0.408;
    }
    std::cout << "  entropy: F " << entropy.mean.f_measure << ", fitted ranges within ["
              << range_lo << ", " << range_hi << "] (" << seconds_since(start) << " s)\n";

    const auto mlp = classify::kfold_cv(std::span(data.blocks), cfg.kfold, tc,
                                        classify::build_mlp);
    std::cout << "  mlp:     F " << mlp.mean.f_measure << " (" << seconds_since(start)
              << " s)\n";

    result.cnn = classify::kfold_cv(std::span(data.code), cfg.kfold, tc, classify::build_cnn);
    result.cnn_epochs = cfg.epochs;
    const double elapsed = seconds_since(start);
    std::cout << "  cnn:     F " << result.cnn.mean.f_measure << " (" << elapsed << " s)\n";

    const double f_cnn = result.cnn.mean.f_measure;
    const double f_mlp = mlp.mean.f_measure;
    const double f_ent = entropy.mean.f_measure;
    if (cfg.full) {
        result.ok = f_cnn > f_mlp && f_mlp > f_ent && f_cnn >= 0.98 && all_overlap;
        if (!all_overlap)
            std::cout << "  a fitted range misses [0.408, 0.753]\n";
    } else {
        result.ok = f_cnn > f_ent && elapsed < 900.0;
    }
    return result;
}

bool criterion_overfitting(const ScaleResult& scale)
{
    if (scale.cnn.folds.empty() || scale.cnn_epochs == 0)
        return false;
    const std::size_t epochs = scale.cnn_epochs;
    std::vector<double> mean_train(epochs, 0.0), mean_test(epochs, 0.0);
    for (const auto& fold : scale.cnn.folds) {
        if (fold.curve.train_error.size() != epochs || fold.curve.test_error.size() != epochs)
            return false;
        for (std::size_t e = 0; e < epochs; ++e) {
            mean_train[e] += fold.curve.train_error[e];
            mean_test[e] += fold.curve.test_error[e];
        }
    }
    for (std::size_t e = 0; e < epochs; ++e) {
        mean_train[e] /= static_cast<double>(scale.cnn.folds.size());
        mean_test[e] /= static_cast<double>(scale.cnn.folds.size());
    }

    const double final_train = mean_train.back();
    const double final_test = mean_test.back();

    // trend over the last window: least-squares slope, projected across the
    // window, must stay below 10% of the window's mean error
    const std::size_t window = std::min<std::size_t>(50, epochs);
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < window; ++i) {
        const double x = static_cast<double>(i);
        const double y = mean_test[epochs - window + i];
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    const double n = static_cast<double>(window);
    const double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    const double level = sy / n;
    const bool no_trend = slope <= 0.0 || slope * n <= 0.1 * level;

    std::cout << "  final mean train " << final_train << ", test " << final_test
              << ", last-" << window << " slope " << slope << "\n";
    return final_test <= 2.0 * final_train && no_trend;
}

bool criterion_scan(const ScaleConfig& cfg, const ScaleData& data,
                    const std::vector<CompiledObject>& objects,
                    const std::vector<std::vector<std::uint8_t>>& documents)
{
    // The scanner packs 16 consecutively decoded instructions starting at
    // every byte offset, while build_code_samples spreads instructions over
    // the whole file. The scan model must see both distributions, and
    // compressed content (the closest non-code mimic of machine code) is
    // oversampled so its windows land clearly on the Others side.
    auto consecutive = [](std::span<const std::uint8_t> bytes, std::size_t count,
                          classify::Label label, std::mt19937_64& rng) {
        std::vector<classify::Sample> out;
        for (std::size_t tries = 0; tries < count * 4 && out.size() < count; ++tries) {
            classify::Sample s{};
            s.label = label;
            std::size_t pos = rng() % bytes.size();
            bool complete = true;
            for (std::size_t slot = 0; slot < dataset::kInstructionsPerSample; ++slot) {
                if (pos >= bytes.size()) {
                    complete = false;
                    break;
                }
                const auto instr = x86::instruction_length(bytes, pos);
                const auto fixed = x86::pad_instruction(instr);
                std::memcpy(s.bytes.data() + slot * x86::kFixedInstructionBytes,
                            fixed.data(), x86::kFixedInstructionBytes);
                pos += instr.length;
            }
            if (complete)
                out.push_back(s);
        }
        return out;
    };

    auto train_set = data.code;
    auto append = [&](std::vector<classify::Sample> extra) {
        train_set.insert(train_set.end(), extra.begin(), extra.end());
    };
    const std::size_t per_obj = (cfg.per_class + objects.size() - 1) / objects.size();
    for (const auto& obj : objects) {
        auto rng = dataset::derive_file_rng(11, obj.path.string());
        append(consecutive(obj.text, per_obj, classify::Label::Program, rng));
    }
    const std::size_t per_doc = (cfg.per_class + documents.size() - 1) / documents.size();
    for (std::size_t i = 0; i < documents.size(); ++i) {
        auto rng = dataset::derive_file_rng(11, "doc" + std::to_string(i));
        append(consecutive(documents[i], per_doc, classify::Label::Others, rng));
    }
    const std::size_t doc_size = (cfg.full ? 384 : 96) * 1024;
    for (int i = 0; i < 5; ++i) {
        const auto deflate_doc = generate_document(810 + static_cast<std::uint64_t>(i),
                                                   doc_size, 7);
        auto rng = dataset::derive_file_rng(11, "deflate" + std::to_string(i));
        append(dataset::build_code_samples(deflate_doc, per_doc, classify::Label::Others,
                                           rng));
        append(consecutive(deflate_doc, 3 * per_doc, classify::Label::Others, rng));
    }

    classify::TrainConfig tc;
    tc.learning_rate = 0.001f;
    tc.batch_size = 100;
    tc.epochs = cfg.full ? cfg.epochs : 80; // the smoke CV epoch count underfits a scan model
    tc.seed = 11;
    auto net = classify::build_cnn();
    net.init_params(tc.seed);
    classify::train(net, train_set, {}, tc);

    const std::size_t threads = std::max<std::size_t>(1, std::thread::hardware_concurrency());

    const auto doc = generate_document(909, 64 * 1024);
    auto start = std::chrono::steady_clock::now();
    const auto doc_report = vis::scan_cnn(doc, net, threads);
    const double doc_time = seconds_since(start);

    std::vector<std::uint8_t> code;
    for (const auto& obj : objects) {
        code.insert(code.end(), obj.text.begin(), obj.text.end());
        if (code.size() >= 64 * 1024)
            break;
    }
    code.resize(std::min<std::size_t>(code.size(), 64 * 1024));
    start = std::chrono::steady_clock::now();
    const auto code_report = vis::scan_cnn(code, net, threads);
    const double code_time = seconds_since(start);

    auto program_fraction = [](const vis::ScanReport& r) {
        std::size_t program = 0;
        for (auto d : r.decisions)
            if (d == vis::Decision::Program)
                ++program;
        return static_cast<double>(program) / static_cast<double>(r.decisions.size());
    };
    const double doc_frac = program_fraction(doc_report);
    const double code_frac = program_fraction(code_report);
    std::cout << "  document: " << doc_frac * 100.0 << "% Program (" << doc_time
              << " s), code: " << code_frac * 100.0 << "% Program (" << code_time << " s)\n";
    return doc_frac < 0.01 && code_frac > 0.5 && doc_time < 300.0 && code_time < 300.0;
}

bool criterion_determinism(const std::vector<CompiledObject>& objects)
{
    const std::string cli = ACCEPTANCE_CLI_PATH;
    const fs::path dir = g_work / "determinism";
    fs::create_directories(dir);

    // small corpus: two objects and two documents
    std::vector<fs::path> doc_paths;
    for (int i = 0; i < 2; ++i) {
        const fs::path p = dir / ("doc" + std::to_string(i) + ".bin");
        write_file(p, generate_document(500 + static_cast<std::uint64_t>(i), 48 * 1024));
        doc_paths.push_back(p);
    }
    const fs::path manifest = dir / "manifest.tsv";
    {
        std::ofstream out(manifest);
        for (std::size_t i = 0; i < 2 && i < objects.size(); ++i)
            out << "Program\tcompiled\t" << objects[i].path.string() << '\n';
        for (const auto& p : doc_paths)
            out << "Others\tsynthetic\t" << p.string() << '\n';
    }

    auto same_bytes = [](const fs::path& a, const fs::path& b) {
        return read_file(a) == read_file(b);
    };

    for (int r = 1; r <= 2; ++r) {
        const std::string suffix = std::to_string(r);
        if (run(cli + " build-dataset --manifest " + manifest.string() + " --out-blocks "
                + (dir / ("blocks" + suffix + ".ds")).string() + " --out-code "
                + (dir / ("code" + suffix + ".ds")).string() + " --seed 9 > /dev/null 2>&1")
            != 0)
            return false;
    }
    bool ok = same_bytes(dir / "blocks1.ds", dir / "blocks2.ds")
        && same_bytes(dir / "code1.ds", dir / "code2.ds");
    std::cout << "  build-dataset byte-identical: " << (ok ? "yes" : "no") << "\n";

    for (int r = 1; r <= 2; ++r) {
        const std::string suffix = std::to_string(r);
        if (run(cli + " train --dataset " + (dir / "blocks1.ds").string()
                + " --model mlp --epochs 3 --seed 9 --deterministic --out "
                + (dir / ("model" + suffix + ".nn")).string() + " --curve "
                + (dir / ("curve" + suffix + ".tsv")).string() + " > /dev/null 2>&1")
            != 0)
            return false;
    }
    const bool train_ok = same_bytes(dir / "model1.nn", dir / "model2.nn")
        && same_bytes(dir / "curve1.tsv", dir / "curve2.tsv");
    std::cout << "  train byte-identical: " << (train_ok ? "yes" : "no") << "\n";
    ok = ok && train_ok;

    for (int r = 1; r <= 2; ++r) {
        const std::string suffix = std::to_string(r);
        if (run(cli + " scan --input " + doc_paths[0].string()
                + " --method mlp --model " + (dir / "model1.nn").string()
                + " --deterministic --out " + (dir / ("scan" + suffix + ".ppm")).string()
                + " --report " + (dir / ("scan" + suffix + ".tsv")).string()
                + " > /dev/null 2>&1")
            != 0)
            return false;
    }
    const bool scan_ok = same_bytes(dir / "scan1.ppm", dir / "scan2.ppm")
        && same_bytes(dir / "scan1.tsv", dir / "scan2.tsv");
    std::cout << "  scan byte-identical: " << (scan_ok ? "yes" : "no") << "\n";
    return ok && scan_ok;
}

int g_failures = 0;

void report(int number, const std::string& name, bool passed)
{
    std::cout << (passed ? "[PASS]" : "[FAIL]") << " criterion " << number << ": " << name
              << "\n";
    if (!passed)
        ++g_failures;
}

} // namespace

int main()
{
    g_work = fs::temp_directory_path() / "oglasses_acceptance";
    fs::create_directories(g_work);

    const char* full_env = std::getenv("OGLASSES_ACCEPT_FULL");
    const bool full = full_env && std::string(full_env) == "1";
    ScaleConfig cfg = full ? ScaleConfig{ true, 10000, 200, 10 }
                           : ScaleConfig{ false, 1000, 20, 5 };

    try {
        std::cout << "criterion 1: cnn layer shapes\n";
        report(1, "cnn layer shapes", criterion_shapes());

        std::cout << "criterion 2: gradient fidelity vs binary64 finite differences\n";
        report(2, "gradient fidelity", criterion_gradients());

        std::cout << "criterion 3: entropy range grid search vs exhaustive search\n";
        report(3, "entropy oracle", criterion_entropy_oracle());

        std::cout << "criterion 4: decoder offsets vs reference disassembler\n";
        std::vector<CompiledObject> objects;
        objects.push_back(compile_i386(101, 300, "-O0", "corpus_a"));
        objects.push_back(compile_i386(102, 300, "-O1", "corpus_b"));
        objects.push_back(compile_i386(103, 300, "-O2", "corpus_c"));
        objects.push_back(compile_i386(104, 300, "-O2 -msse2 -mfpmath=sse", "corpus_d"));
        objects.push_back(compile_i386(105, 300, "-O3", "corpus_e"));
        objects.push_back(compile_i386(106, 300, "-O1", "corpus_f"));
        report(4, "decoder oracle",
               criterion_decoder({ objects.begin(), objects.begin() + 3 }));

        std::cout << "criterion 5: scaled classifier comparison\n";
        std::vector<std::vector<std::uint8_t>> documents;
        const std::size_t doc_size = (full ? 384 : 96) * 1024;
        for (int i = 0; i < 8; ++i)
            documents.push_back(generate_document(700 + static_cast<std::uint64_t>(i),
                                                  doc_size));
        for (int kind : { 0, 2, 3, 4, 7 }) // xml, nulls, utf16, text, deflate
            documents.push_back(generate_document(800 + static_cast<std::uint64_t>(kind),
                                                  doc_size, kind));
        const auto data = build_scale_data(cfg, objects, documents);
        const auto scale = criterion_scale(cfg, data);
        report(5, full ? "scaled classifier comparison (full)"
                       : "scaled classifier comparison (smoke)", scale.ok);

        std::cout << "criterion 6: no over-fitting in the cnn learning curves\n";
        report(6, "no over-fitting", criterion_overfitting(scale));

        std::cout << "criterion 7: scan sanity on document and code files\n";
        report(7, "scan sanity", criterion_scan(cfg, data, objects, documents));

        std::cout << "criterion 8: cli determinism\n";
        report(8, "cli determinism", criterion_determinism(objects));
    } catch (const std::exception& e) {
        std::cout << "[FAIL] unexpected error: " << e.what() << "\n";
        ++g_failures;
    }

    std::cout << (g_failures ? "FAILURE: " : "SUCCESS: ") << (8 - g_failures)
              << "/8 criteria passed\n";
    return g_failures ? 1 : 0;
}
