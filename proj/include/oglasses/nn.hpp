#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace oglasses::nn {

// Batches are row-major: one sample per row, features along the row.
using Matrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXf;

class ShapeError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Generic n-d value container for the public API boundary. Internally the
// layers work on Matrix batches.
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<float> values;

    std::size_t count() const
    {
        std::size_t n = 1;
        for (auto d : shape)
            n *= d;
        return n;
    }
    void validate() const; // throws ShapeError on count mismatch or non-finite values
};

enum class LayerKind : std::uint8_t {
    conv1d = 0,
    fully_connected = 1,
    batch_norm = 2,
    relu = 3,
    softmax = 4,
};

enum class Mode {
    train,
    infer,
};

struct ParamView {
    float* values;
    float* grads;
    std::size_t size;
};

class Layer {
public:
    virtual ~Layer() = default;
    virtual LayerKind kind() const = 0;
    // x: batch x input_width. Returns batch x output_width.
    virtual Matrix forward(const Matrix& x, Mode mode) = 0;
    // dy: gradient of the batch loss w.r.t. this layer's output. Fills the
    // parameter gradients and returns the gradient w.r.t. the input.
    virtual Matrix backward(const Matrix& dy) = 0;
    virtual std::vector<ParamView> params() = 0;
    virtual std::size_t input_width() const = 0;
    virtual std::size_t output_width() const = 0;
};

class Conv1d : public Layer {
public:
    // Output width (in_width - kernel) / stride + 1 must be a positive
    // integer; throws ShapeError otherwise. Weights are shared across all
    // kernel positions.
    Conv1d(std::size_t in_width, std::size_t in_depth, std::size_t kernel, std::size_t stride,
           std::size_t out_depth);

    LayerKind kind() const override { return LayerKind::conv1d; }
    Matrix forward(const Matrix& x, Mode mode) override;
    Matrix backward(const Matrix& dy) override;
    std::vector<ParamView> params() override;
    std::size_t input_width() const override { return in_width_ * in_depth_; }
    std::size_t output_width() const override { return out_width_ * out_depth_; }

    std::size_t in_width() const { return in_width_; }
    std::size_t in_depth() const { return in_depth_; }
    std::size_t kernel() const { return kernel_; }
    std::size_t stride() const { return stride_; }
    std::size_t out_depth() const { return out_depth_; }
    std::size_t out_width() const { return out_width_; }

    Matrix& weights() { return w_; }
    Vector& bias() { return b_; }

private:
    std::size_t in_width_, in_depth_, kernel_, stride_, out_depth_, out_width_;
    Matrix w_, dw_;   // out_depth x (kernel * in_depth)
    Vector b_, db_;   // out_depth
    Matrix cols_;     // cached im2col, (batch * out_width) x (kernel * in_depth)
    std::size_t batch_ = 0;
};

class FullyConnected : public Layer {
public:
    FullyConnected(std::size_t in, std::size_t out);

    LayerKind kind() const override { return LayerKind::fully_connected; }
    Matrix forward(const Matrix& x, Mode mode) override;
    Matrix backward(const Matrix& dy) override;
    std::vector<ParamView> params() override;
    std::size_t input_width() const override { return in_; }
    std::size_t output_width() const override { return out_; }

    Matrix& weights() { return w_; }
    Vector& bias() { return b_; }

private:
    std::size_t in_, out_;
    Matrix w_, dw_; // out x in
    Vector b_, db_;
    Matrix x_; // cached input
};

class BatchNorm : public Layer {
public:
    explicit BatchNorm(std::size_t features, float epsilon = 1e-5f, float momentum = 0.9f);

    LayerKind kind() const override { return LayerKind::batch_norm; }
    Matrix forward(const Matrix& x, Mode mode) override;
    Matrix backward(const Matrix& dy) override;
    std::vector<ParamView> params() override;
    std::size_t input_width() const override { return features_; }
    std::size_t output_width() const override { return features_; }

    float epsilon() const { return epsilon_; }
    Vector& scale() { return gamma_; }
    Vector& shift() { return beta_; }
    Vector& running_mean() { return run_mean_; }
    Vector& running_var() { return run_var_; }

private:
    std::size_t features_;
    float epsilon_, momentum_;
    Vector gamma_, beta_, dgamma_, dbeta_;
    Vector run_mean_, run_var_;
    Matrix xhat_, centered_;
    Vector ivar_;
    bool train_pass_ = false;
};

class Relu : public Layer {
public:
    explicit Relu(std::size_t width) : width_(width) {}
    LayerKind kind() const override { return LayerKind::relu; }
    Matrix forward(const Matrix& x, Mode mode) override;
    Matrix backward(const Matrix& dy) override;
    std::vector<ParamView> params() override { return {}; }
    std::size_t input_width() const override { return width_; }
    std::size_t output_width() const override { return width_; }

private:
    std::size_t width_;
    Matrix mask_;
};

class Softmax : public Layer {
public:
    explicit Softmax(std::size_t width) : width_(width) {}
    LayerKind kind() const override { return LayerKind::softmax; }
    Matrix forward(const Matrix& x, Mode mode) override;
    Matrix backward(const Matrix& dy) override;
    std::vector<ParamView> params() override { return {}; }
    std::size_t input_width() const override { return width_; }
    std::size_t output_width() const override { return width_; }

private:
    std::size_t width_;
    Matrix y_;
};

class Network {
public:
    Network() = default;
    Network(Network&&) = default;
    Network& operator=(Network&&) = default;

    void add(std::unique_ptr<Layer> layer);
    Matrix forward(const Matrix& x, Mode mode);
    void backward(const Matrix& dloss_dy);
    // Plain SGD: every parameter moves by exactly -eta * gradient.
    void sgd_step(float eta);
    std::vector<ParamView> params();
    // Zero-mean uniform init with half-width sqrt(6 / fan_in); biases zero.
    void init_params(std::uint64_t seed);

    std::size_t input_width() const;
    std::size_t output_width() const;
    const std::vector<std::unique_ptr<Layer>>& layers() const { return layers_; }
    std::vector<std::unique_ptr<Layer>>& layers() { return layers_; }

    void save(const std::filesystem::path& path) const;
    static Network load(const std::filesystem::path& path);

private:
    std::vector<std::unique_ptr<Layer>> layers_;
};

// Two-term cross-entropy summed over both softmax outputs, averaged over the
// batch. Log arguments are clamped below at 1e-12.
float cross_entropy(const Matrix& y, const Matrix& targets);
Matrix cross_entropy_grad(const Matrix& y, const Matrix& targets);

} // namespace oglasses::nn
