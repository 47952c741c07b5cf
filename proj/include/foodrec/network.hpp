#ifndef FOODREC_NETWORK_HPP
#define FOODREC_NETWORK_HPP

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "foodrec/augment.hpp"
#include "foodrec/dataset.hpp"
#include "foodrec/rng.hpp"
#include "foodrec/tensor.hpp"

namespace foodrec {

enum class LayerKind : std::uint8_t {
    conv = 0,
    maxpool = 1,
    relu = 2,
    dropout = 3,
    flatten = 4,
    dense = 5,
    softmax = 6,
};

struct LayerSpec {
    LayerKind kind = LayerKind::relu;
    int kernel = 0;       // conv: K (odd)
    int in_channels = 0;  // conv
    int out_channels = 0; // conv
    float rate = 0.0f;    // dropout: p in [0,1)
    int in_width = 0;     // dense
    int out_width = 0;    // dense

    static LayerSpec make_conv(int kernel, int in_ch, int out_ch);
    static LayerSpec make_maxpool() { return {LayerKind::maxpool}; }
    static LayerSpec make_relu() { return {LayerKind::relu}; }
    static LayerSpec make_dropout(float p);
    static LayerSpec make_flatten() { return {LayerKind::flatten}; }
    static LayerSpec make_dense(int in_w, int out_w);
    static LayerSpec make_softmax() { return {LayerKind::softmax}; }
};

/// Ordered layer chain plus parameter tensors. weights/biases align with
/// layers; parameterless layers hold empty tensors.
template <typename T>
struct NetworkModelT {
    std::vector<LayerSpec> layers;
    std::vector<TensorT<T>> weights;
    std::vector<TensorT<T>> biases;
    std::vector<std::string> class_names;

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& w : weights) n += w.size();
        for (const auto& b : biases) n += b.size();
        return n;
    }

    template <typename U>
    NetworkModelT<U> cast() const {
        NetworkModelT<U> out;
        out.layers = layers;
        out.class_names = class_names;
        for (const auto& w : weights) out.weights.push_back(w.template cast<U>());
        for (const auto& b : biases) out.biases.push_back(b.template cast<U>());
        return out;
    }
};

using NetworkModel = NetworkModelT<float>;

/// Validates channel/width chaining and dropout rates; throws
/// Errc::shape_inconsistent on violations.
void validate_chain(const NetworkModel& model);

/// The published five-layer architecture at its native 128x128x3 input:
/// conv7/32, relu, pool, conv5/64, relu, pool, conv3/128, relu, pool,
/// dropout .25, flatten, dense 128, relu, dropout .5, dense K, softmax.
/// He-normal init for the hidden layers, scaled-normal for the final dense,
/// zero biases, deterministic in seed.
NetworkModel build_five_layer_network(std::uint64_t seed);
NetworkModel build_five_layer_network(int input_h, int input_w, int input_c,
                                 std::vector<std::string> class_names, std::uint64_t seed);

/// General constructor for reduced test networks (same init rules).
NetworkModel build_network(std::vector<LayerSpec> layers,
                           std::vector<std::string> class_names, std::uint64_t seed);

enum class RunMode { train, eval };

struct BatchCache; // opaque; defined in network.cpp

struct BatchCachePtr {
    BatchCachePtr();
    ~BatchCachePtr();
    BatchCachePtr(BatchCachePtr&&) noexcept;
    BatchCachePtr& operator=(BatchCachePtr&&) noexcept;
    BatchCache* get() const { return p_; }

private:
    BatchCache* p_;
};

/// batch is (B,H,W,C) with values in [0,1]; returns (B,K) class
/// probabilities. Train mode consumes exactly B draws from rng (one dropout
/// seed per sample, drawn before the samples fan out to workers); eval mode
/// consumes none.
Tensor forward(const NetworkModel& model, const Tensor& batch, RunMode mode, Rng& rng,
               BatchCachePtr* cache = nullptr);

struct Gradients {
    std::vector<Tensor> weights;
    std::vector<Tensor> biases;
};

/// Exact gradient of the mean cross-entropy over the cached batch, dropout
/// masks held fixed. Per-sample contributions are summed in sample order.
Gradients backward(const NetworkModel& model, const BatchCachePtr& cache,
                   const std::vector<int>& labels);

/// Numerically stable softmax (shift by max).
std::vector<double> softmax(const std::vector<double>& logits);

/// Mean of -log(probs[b, label_b]) with probs clamped below at 1e-12.
double cross_entropy(const Tensor& probs, const std::vector<int>& labels);

/// eta = min(eta0 * exp(C), eta_max).
double lr_schedule(double eta0, double C, double eta_max);

/// p <- p - eta*g (plain SGD).
void sgd_update(Tensor& params, const Tensor& grads, float eta);
void sgd_step(NetworkModel& model, const Gradients& grads, double eta);

struct TrainConfig {
    double eta0 = 0.001;
    double eta_max = 0.05;
    int batch_size = 32;
    int max_epochs = 100;
    int patience = 25;
    std::uint64_t seed = 0;
    std::optional<AugmentConfig> augment;

    void validate() const;
};

struct EpochRecord {
    int epoch = 0; // 1-based
    double train_loss = 0.0;
    double train_acc = 0.0;
    double test_loss = 0.0;
    double test_acc = 0.0;
    double eta = 0.0;
};

using TrainCurves = std::vector<EpochRecord>;

struct TrainResult {
    NetworkModel model; // parameters achieving best test accuracy
    TrainCurves curves;
};

/// Datasets must already match the model's input resolution. Per epoch:
/// seeded shuffle, optional per-image augmentation, minibatch SGD with eta
/// computed once per epoch from the previous epoch's mean train loss
/// (epoch 1 uses C = ln(class_count)); stops at max_epochs or after
/// `patience` epochs without test-accuracy improvement.
TrainResult train(NetworkModel model, const PackedDataset& train_set,
                  const PackedDataset& test_set, const TrainConfig& config);

struct EvalStats {
    double loss = 0.0;
    double accuracy = 0.0;
    std::vector<int> predictions;
};

EvalStats evaluate(const NetworkModel& model, const PackedDataset& data, int batch_size = 32);

/// Eval-mode argmax; ties resolve to the smallest class index.
std::vector<int> predict(const NetworkModel& model, const Tensor& batch);

void save_checkpoint(const NetworkModel& model, const std::string& path);
NetworkModel load_checkpoint(const std::string& path);

struct GradCheckWorst;

/// Max relative error between analytic gradients and 64-bit central finite
/// differences (step 1e-4) over every parameter of a reduced network
/// containing every layer kind, with frozen dropout masks. corrupt_backward
/// flips the analytic gradient sign (checker self-test; error ~2).
double gradient_check(std::uint64_t seed, bool corrupt_backward = false,
                      GradCheckWorst* worst = nullptr);

/// Same check over a flatten->dense->softmax toy (exact for linear maps).
double gradient_check_linear(std::uint64_t seed);

/// Where the largest relative error sat (diagnostics).
struct GradCheckWorst {
    int layer = -1;
    bool in_bias = false;
    std::size_t index = 0;
    double analytic = 0.0;
    double finite_diff = 0.0;
};

/// Shared engine: any model, any batch.
double gradient_check_model(const NetworkModel& model, const Tensor& batch,
                            const std::vector<int>& labels, std::uint64_t mask_seed,
                            bool corrupt_backward, GradCheckWorst* worst = nullptr);

/// Rescale a packed dataset to a new square resolution (bilinear, then
/// requantized). A no-op returning the input when sizes already match.
PackedDataset prepare_resolution(const PackedDataset& data, int size);

} // namespace foodrec

#endif
