#include "oglasses/nn.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <random>

namespace oglasses::nn {

namespace {

constexpr char kMagic[4] = { 'O', 'G', 'N', 'N' };
constexpr std::uint8_t kFormatVersion = 1;
constexpr float kProbClamp = 1e-12f;

[[noreturn]] void shape_mismatch(const char* where, std::size_t expected, std::size_t actual)
{
    throw ShapeError(std::string(where) + ": expected width " + std::to_string(expected)
                     + ", got " + std::to_string(actual));
}

const char* kind_name(LayerKind k)
{
    switch (k) {
    case LayerKind::conv1d: return "conv1d";
    case LayerKind::fully_connected: return "fully_connected";
    case LayerKind::batch_norm: return "batch_norm";
    case LayerKind::relu: return "relu";
    case LayerKind::softmax: return "softmax";
    }
    return "?";
}

void put_u32_le(std::ostream& out, std::uint32_t v)
{
    for (int i = 0; i < 4; ++i)
        out.put(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint32_t get_u32_le(std::istream& in)
{
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
        const int c = in.get();
        if (c == EOF)
            throw std::runtime_error("model: truncated file");
        v |= static_cast<std::uint32_t>(c) << (8 * i);
    }
    return v;
}

void put_f32_span(std::ostream& out, const float* data, std::size_t n)
{
    // IEEE-754 binary32, little-endian host assumed.
    out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(n * sizeof(float)));
}

void get_f32_span(std::istream& in, float* data, std::size_t n)
{
    in.read(reinterpret_cast<char*>(data), static_cast<std::streamsize>(n * sizeof(float)));
    if (in.gcount() != static_cast<std::streamsize>(n * sizeof(float)))
        throw std::runtime_error("model: truncated parameter block");
}

} // namespace

void Tensor::validate() const
{
    if (values.size() != count())
        throw ShapeError("tensor: value count " + std::to_string(values.size())
                         + " does not match shape product " + std::to_string(count()));
    for (float v : values)
        if (!std::isfinite(v))
            throw ShapeError("tensor: non-finite value");
}

// ---- Conv1d ----

Conv1d::Conv1d(std::size_t in_width, std::size_t in_depth, std::size_t kernel, std::size_t stride,
               std::size_t out_depth)
    : in_width_(in_width)
    , in_depth_(in_depth)
    , kernel_(kernel)
    , stride_(stride)
    , out_depth_(out_depth)
{
    if (kernel == 0 || stride == 0 || in_width < kernel || (in_width - kernel) % stride != 0)
        throw ShapeError("conv1d: (W-K)/S+1 is not a positive integer for W="
                         + std::to_string(in_width) + " K=" + std::to_string(kernel)
                         + " S=" + std::to_string(stride));
    out_width_ = (in_width - kernel) / stride + 1;
    w_ = Matrix::Zero(static_cast<Eigen::Index>(out_depth_),
                      static_cast<Eigen::Index>(kernel_ * in_depth_));
    dw_ = Matrix::Zero(w_.rows(), w_.cols());
    b_ = Vector::Zero(static_cast<Eigen::Index>(out_depth_));
    db_ = Vector::Zero(b_.size());
}

Matrix Conv1d::forward(const Matrix& x, Mode)
{
    if (static_cast<std::size_t>(x.cols()) != input_width())
        shape_mismatch("conv1d", input_width(), static_cast<std::size_t>(x.cols()));
    batch_ = static_cast<std::size_t>(x.rows());
    const std::size_t kd = kernel_ * in_depth_;
    cols_.resize(static_cast<Eigen::Index>(batch_ * out_width_), static_cast<Eigen::Index>(kd));
    for (std::size_t i = 0; i < batch_; ++i)
        for (std::size_t j = 0; j < out_width_; ++j)
            cols_.row(static_cast<Eigen::Index>(i * out_width_ + j)) =
                x.row(static_cast<Eigen::Index>(i))
                    .segment(static_cast<Eigen::Index>(j * stride_ * in_depth_),
                             static_cast<Eigen::Index>(kd));

    Matrix out2d = cols_ * w_.transpose();
    out2d.rowwise() += b_.transpose();
    // Rows (i * out_width + j) laid back-to-back are exactly the row-major
    // [position][depth] layout of sample i.
    return Eigen::Map<Matrix>(out2d.data(), static_cast<Eigen::Index>(batch_),
                              static_cast<Eigen::Index>(out_width_ * out_depth_));
}

Matrix Conv1d::backward(const Matrix& dy)
{
    if (static_cast<std::size_t>(dy.cols()) != output_width())
        shape_mismatch("conv1d backward", output_width(), static_cast<std::size_t>(dy.cols()));
    Eigen::Map<const Matrix> dout2d(dy.data(), static_cast<Eigen::Index>(batch_ * out_width_),
                                    static_cast<Eigen::Index>(out_depth_));
    dw_ = dout2d.transpose() * cols_;
    db_ = dout2d.colwise().sum().transpose();

    Matrix dcols = dout2d * w_;
    Matrix dx = Matrix::Zero(static_cast<Eigen::Index>(batch_),
                             static_cast<Eigen::Index>(input_width()));
    const std::size_t kd = kernel_ * in_depth_;
    for (std::size_t i = 0; i < batch_; ++i)
        for (std::size_t j = 0; j < out_width_; ++j)
            dx.row(static_cast<Eigen::Index>(i))
                .segment(static_cast<Eigen::Index>(j * stride_ * in_depth_),
                         static_cast<Eigen::Index>(kd)) +=
                dcols.row(static_cast<Eigen::Index>(i * out_width_ + j));
    return dx;
}

std::vector<ParamView> Conv1d::params()
{
    return {
        { w_.data(), dw_.data(), static_cast<std::size_t>(w_.size()) },
        { b_.data(), db_.data(), static_cast<std::size_t>(b_.size()) },
    };
}

// ---- FullyConnected ----

FullyConnected::FullyConnected(std::size_t in, std::size_t out)
    : in_(in)
    , out_(out)
{
    w_ = Matrix::Zero(static_cast<Eigen::Index>(out_), static_cast<Eigen::Index>(in_));
    dw_ = Matrix::Zero(w_.rows(), w_.cols());
    b_ = Vector::Zero(static_cast<Eigen::Index>(out_));
    db_ = Vector::Zero(b_.size());
}

Matrix FullyConnected::forward(const Matrix& x, Mode)
{
    if (static_cast<std::size_t>(x.cols()) != in_)
        shape_mismatch("fully_connected", in_, static_cast<std::size_t>(x.cols()));
    x_ = x;
    Matrix y = x * w_.transpose();
    y.rowwise() += b_.transpose();
    return y;
}

Matrix FullyConnected::backward(const Matrix& dy)
{
    if (static_cast<std::size_t>(dy.cols()) != out_)
        shape_mismatch("fully_connected backward", out_, static_cast<std::size_t>(dy.cols()));
    dw_ = dy.transpose() * x_;
    db_ = dy.colwise().sum().transpose();
    return dy * w_;
}

std::vector<ParamView> FullyConnected::params()
{
    return {
        { w_.data(), dw_.data(), static_cast<std::size_t>(w_.size()) },
        { b_.data(), db_.data(), static_cast<std::size_t>(b_.size()) },
    };
}

// ---- BatchNorm ----

BatchNorm::BatchNorm(std::size_t features, float epsilon, float momentum)
    : features_(features)
    , epsilon_(epsilon)
    , momentum_(momentum)
{
    const auto f = static_cast<Eigen::Index>(features_);
    gamma_ = Vector::Ones(f);
    beta_ = Vector::Zero(f);
    dgamma_ = Vector::Zero(f);
    dbeta_ = Vector::Zero(f);
    run_mean_ = Vector::Zero(f);
    run_var_ = Vector::Ones(f);
}

Matrix BatchNorm::forward(const Matrix& x, Mode mode)
{
    if (static_cast<std::size_t>(x.cols()) != features_)
        shape_mismatch("batch_norm", features_, static_cast<std::size_t>(x.cols()));

    if (mode == Mode::infer) {
        train_pass_ = false;
        Vector ivar = (run_var_.array() + epsilon_).rsqrt().matrix();
        Vector scale = (ivar.array() * gamma_.array()).matrix();
        Matrix y = x;
        y.rowwise() -= run_mean_.transpose();
        y = (y.array().rowwise() * scale.transpose().array()).matrix();
        y.rowwise() += beta_.transpose();
        return y;
    }

    const auto batch = x.rows();
    if (batch < 2)
        throw std::invalid_argument("batch_norm: train mode requires batch >= 2");
    train_pass_ = true;

    Vector mean = x.colwise().mean().transpose();
    centered_ = x.rowwise() - mean.transpose();
    Vector var = centered_.array().square().colwise().mean().transpose().matrix();
    ivar_ = (var.array() + epsilon_).rsqrt().matrix();
    xhat_ = (centered_.array().rowwise() * ivar_.transpose().array()).matrix();

    run_mean_ = momentum_ * run_mean_ + (1.0f - momentum_) * mean;
    run_var_ = momentum_ * run_var_ + (1.0f - momentum_) * var;

    Matrix y = (xhat_.array().rowwise() * gamma_.transpose().array()).matrix();
    y.rowwise() += beta_.transpose();
    return y;
}

Matrix BatchNorm::backward(const Matrix& dy)
{
    if (!train_pass_)
        throw std::logic_error("batch_norm: backward without a train-mode forward");
    if (static_cast<std::size_t>(dy.cols()) != features_)
        shape_mismatch("batch_norm backward", features_, static_cast<std::size_t>(dy.cols()));

    const float inv_batch = 1.0f / static_cast<float>(dy.rows());
    dgamma_ = (dy.array() * xhat_.array()).colwise().sum().transpose().matrix();
    dbeta_ = dy.colwise().sum().transpose();

    Matrix dxhat = (dy.array().rowwise() * gamma_.transpose().array()).matrix();
    Vector dvar = (dxhat.array() * centered_.array()).colwise().sum().transpose().matrix();
    dvar = ((-0.5f) * dvar.array() * ivar_.array().cube()).matrix();
    Vector dmean = (-(dxhat.colwise().sum().transpose().array() * ivar_.array())
                    - 2.0f * dvar.array() * centered_.colwise().mean().transpose().array())
                       .matrix();

    Matrix dx = (dxhat.array().rowwise() * ivar_.transpose().array()).matrix();
    dx += (centered_.array().rowwise() * (2.0f * inv_batch * dvar).transpose().array()).matrix();
    dx.rowwise() += (inv_batch * dmean).transpose();
    return dx;
}

std::vector<ParamView> BatchNorm::params()
{
    return {
        { gamma_.data(), dgamma_.data(), static_cast<std::size_t>(gamma_.size()) },
        { beta_.data(), dbeta_.data(), static_cast<std::size_t>(beta_.size()) },
    };
}

// ---- Relu ----

Matrix Relu::forward(const Matrix& x, Mode)
{
    if (static_cast<std::size_t>(x.cols()) != width_)
        shape_mismatch("relu", width_, static_cast<std::size_t>(x.cols()));
    mask_ = (x.array() > 0.0f).cast<float>().matrix();
    return x.cwiseMax(0.0f);
}

Matrix Relu::backward(const Matrix& dy)
{
    return (dy.array() * mask_.array()).matrix();
}

// ---- Softmax ----

Matrix Softmax::forward(const Matrix& x, Mode)
{
    if (static_cast<std::size_t>(x.cols()) != width_)
        shape_mismatch("softmax", width_, static_cast<std::size_t>(x.cols()));
    Vector rowmax = x.rowwise().maxCoeff();
    Matrix e = x;
    e.colwise() -= rowmax;
    e = e.array().exp().matrix();
    Vector sum = e.rowwise().sum();
    y_ = (e.array().colwise() / sum.array()).matrix();
    return y_;
}

Matrix Softmax::backward(const Matrix& dy)
{
    Vector dot = (dy.array() * y_.array()).rowwise().sum().matrix();
    Matrix shifted = dy;
    shifted.colwise() -= dot;
    return (y_.array() * shifted.array()).matrix();
}

// ---- Network ----

void Network::add(std::unique_ptr<Layer> layer)
{
    if (!layers_.empty() && layers_.back()->output_width() != layer->input_width())
        shape_mismatch("network: layer chain", layers_.back()->output_width(),
                       layer->input_width());
    layers_.push_back(std::move(layer));
}

Matrix Network::forward(const Matrix& x, Mode mode)
{
    Matrix a = x;
    for (const auto& layer : layers_) {
        a = layer->forward(a, mode);
        if (!a.allFinite())
            throw std::runtime_error(std::string("network: non-finite values after ")
                                     + kind_name(layer->kind()) + " layer");
    }
    return a;
}

void Network::backward(const Matrix& dloss_dy)
{
    Matrix g = dloss_dy;
    for (auto it = layers_.rbegin(); it != layers_.rend(); ++it)
        g = (*it)->backward(g);
}

void Network::sgd_step(float eta)
{
    for (const auto& layer : layers_)
        for (auto p : layer->params())
            for (std::size_t i = 0; i < p.size; ++i)
                p.values[i] -= eta * p.grads[i];
}

std::vector<ParamView> Network::params()
{
    std::vector<ParamView> all;
    for (const auto& layer : layers_)
        for (auto p : layer->params())
            all.push_back(p);
    return all;
}

void Network::init_params(std::uint64_t seed)
{
    std::mt19937_64 rng(seed);
    for (const auto& layer : layers_) {
        std::size_t fan_in = 0;
        if (auto* conv = dynamic_cast<Conv1d*>(layer.get()))
            fan_in = conv->kernel() * conv->in_depth();
        else if (auto* fc = dynamic_cast<FullyConnected*>(layer.get()))
            fan_in = fc->input_width();
        else
            continue; // batch_norm keeps scale 1 / shift 0; relu/softmax have none
        const float half_width = std::sqrt(6.0f / static_cast<float>(fan_in));
        std::uniform_real_distribution<float> dist(-half_width, half_width);
        auto views = layer->params();
        float* w = views[0].values;
        for (std::size_t i = 0; i < views[0].size; ++i)
            w[i] = dist(rng);
        std::memset(views[1].values, 0, views[1].size * sizeof(float)); // biases
    }
}

std::size_t Network::input_width() const
{
    if (layers_.empty())
        throw std::logic_error("network: empty");
    return layers_.front()->input_width();
}

std::size_t Network::output_width() const
{
    if (layers_.empty())
        throw std::logic_error("network: empty");
    return layers_.back()->output_width();
}

void Network::save(const std::filesystem::path& path) const
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw std::runtime_error("cannot open " + path.string() + " for writing");
    out.write(kMagic, 4);
    out.put(static_cast<char>(kFormatVersion));
    out.put(static_cast<char>(layers_.size()));

    for (const auto& layer : layers_) {
        out.put(static_cast<char>(layer->kind()));
        switch (layer->kind()) {
        case LayerKind::conv1d: {
            auto* c = dynamic_cast<const Conv1d*>(layer.get());
            auto* mc = const_cast<Conv1d*>(c);
            out.put(5);
            put_u32_le(out, static_cast<std::uint32_t>(c->in_width()));
            put_u32_le(out, static_cast<std::uint32_t>(c->in_depth()));
            put_u32_le(out, static_cast<std::uint32_t>(c->kernel()));
            put_u32_le(out, static_cast<std::uint32_t>(c->stride()));
            put_u32_le(out, static_cast<std::uint32_t>(c->out_depth()));
            put_f32_span(out, mc->weights().data(), static_cast<std::size_t>(mc->weights().size()));
            put_f32_span(out, mc->bias().data(), static_cast<std::size_t>(mc->bias().size()));
            break;
        }
        case LayerKind::fully_connected: {
            auto* f = const_cast<FullyConnected*>(dynamic_cast<const FullyConnected*>(layer.get()));
            out.put(2);
            put_u32_le(out, static_cast<std::uint32_t>(f->output_width()));
            put_u32_le(out, static_cast<std::uint32_t>(f->input_width()));
            put_f32_span(out, f->weights().data(), static_cast<std::size_t>(f->weights().size()));
            put_f32_span(out, f->bias().data(), static_cast<std::size_t>(f->bias().size()));
            break;
        }
        case LayerKind::batch_norm: {
            auto* b = const_cast<BatchNorm*>(dynamic_cast<const BatchNorm*>(layer.get()));
            out.put(1);
            put_u32_le(out, static_cast<std::uint32_t>(b->input_width()));
            put_f32_span(out, b->scale().data(), static_cast<std::size_t>(b->scale().size()));
            put_f32_span(out, b->shift().data(), static_cast<std::size_t>(b->shift().size()));
            put_f32_span(out, b->running_mean().data(), static_cast<std::size_t>(b->running_mean().size()));
            put_f32_span(out, b->running_var().data(), static_cast<std::size_t>(b->running_var().size()));
            const float eps = b->epsilon();
            put_f32_span(out, &eps, 1);
            break;
        }
        case LayerKind::relu:
        case LayerKind::softmax:
            out.put(1);
            put_u32_le(out, static_cast<std::uint32_t>(layer->input_width()));
            break;
        }
    }
    if (!out)
        throw std::runtime_error("write failed for " + path.string());
}

Network Network::load(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw std::runtime_error("cannot open " + path.string());
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0)
        throw std::runtime_error("model: bad magic in " + path.string());
    const int version = in.get();
    if (version != kFormatVersion)
        throw std::runtime_error("model: unsupported version " + std::to_string(version));
    const int layer_count = in.get();
    if (layer_count == EOF)
        throw std::runtime_error("model: truncated file");

    Network net;
    for (int l = 0; l < layer_count; ++l) {
        const int kind_byte = in.get();
        const int dim_count = in.get();
        if (kind_byte == EOF || dim_count == EOF)
            throw std::runtime_error("model: truncated layer header");
        std::vector<std::uint32_t> dims(static_cast<std::size_t>(dim_count));
        for (auto& d : dims)
            d = get_u32_le(in);

        switch (static_cast<LayerKind>(kind_byte)) {
        case LayerKind::conv1d: {
            if (dims.size() != 5)
                throw std::runtime_error("model: conv1d expects 5 dims");
            auto c = std::make_unique<Conv1d>(dims[0], dims[1], dims[2], dims[3], dims[4]);
            get_f32_span(in, c->weights().data(), static_cast<std::size_t>(c->weights().size()));
            get_f32_span(in, c->bias().data(), static_cast<std::size_t>(c->bias().size()));
            net.add(std::move(c));
            break;
        }
        case LayerKind::fully_connected: {
            if (dims.size() != 2)
                throw std::runtime_error("model: fully_connected expects 2 dims");
            auto f = std::make_unique<FullyConnected>(dims[1], dims[0]);
            get_f32_span(in, f->weights().data(), static_cast<std::size_t>(f->weights().size()));
            get_f32_span(in, f->bias().data(), static_cast<std::size_t>(f->bias().size()));
            net.add(std::move(f));
            break;
        }
        case LayerKind::batch_norm: {
            if (dims.size() != 1)
                throw std::runtime_error("model: batch_norm expects 1 dim");
            auto b = std::make_unique<BatchNorm>(dims[0]);
            get_f32_span(in, b->scale().data(), static_cast<std::size_t>(b->scale().size()));
            get_f32_span(in, b->shift().data(), static_cast<std::size_t>(b->shift().size()));
            get_f32_span(in, b->running_mean().data(), static_cast<std::size_t>(b->running_mean().size()));
            get_f32_span(in, b->running_var().data(), static_cast<std::size_t>(b->running_var().size()));
            float eps;
            get_f32_span(in, &eps, 1);
            auto bn = std::make_unique<BatchNorm>(dims[0], eps);
            bn->scale() = b->scale();
            bn->shift() = b->shift();
            bn->running_mean() = b->running_mean();
            bn->running_var() = b->running_var();
            net.add(std::move(bn));
            break;
        }
        case LayerKind::relu:
            if (dims.size() != 1)
                throw std::runtime_error("model: relu expects 1 dim");
            net.add(std::make_unique<Relu>(dims[0]));
            break;
        case LayerKind::softmax:
            if (dims.size() != 1)
                throw std::runtime_error("model: softmax expects 1 dim");
            net.add(std::make_unique<Softmax>(dims[0]));
            break;
        default:
            throw std::runtime_error("model: unknown layer kind " + std::to_string(kind_byte));
        }
    }
    return net;
}

// ---- Loss ----

float cross_entropy(const Matrix& y, const Matrix& targets)
{
    if (y.rows() != targets.rows() || y.cols() != targets.cols())
        throw ShapeError("cross_entropy: prediction/target shape mismatch");
    Eigen::ArrayXXf yc = y.array();
    Eigen::ArrayXXf t = targets.array();
    // Log arguments are clamped below; clamping yc above 1 - eps is a no-op
    // in binary32 and would leave 0 * log(0) = NaN.
    const float total = -(t * yc.max(kProbClamp).log()
                          + (1.0f - t) * (1.0f - yc).max(kProbClamp).log()).sum();
    return total / static_cast<float>(y.rows());
}

Matrix cross_entropy_grad(const Matrix& y, const Matrix& targets)
{
    if (y.rows() != targets.rows() || y.cols() != targets.cols())
        throw ShapeError("cross_entropy_grad: prediction/target shape mismatch");
    Eigen::ArrayXXf yc = y.array();
    Eigen::ArrayXXf t = targets.array();
    const float inv_batch = 1.0f / static_cast<float>(y.rows());
    return (inv_batch * (-t / yc.max(kProbClamp) + (1.0f - t) / (1.0f - yc).max(kProbClamp)))
        .matrix();
}

} // namespace oglasses::nn
