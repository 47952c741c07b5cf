#ifndef FOODREC_BOF_HPP
#define FOODREC_BOF_HPP

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "foodrec/dataset.hpp"
#include "foodrec/tensor.hpp"

namespace foodrec::bof {

/// luma = 0.299 R + 0.587 G + 0.114 B, (H,W,3) -> (H,W).
Tensor grayscale(const Tensor& image);

/// 4x4 spatial cells x 8 orientation bins.
struct Descriptor {
    std::array<float, 128> v{};
    int grid_x = 0;
    int grid_y = 0;
};

/// Dense grid of patch descriptors: patches anchored top-left every `step`
/// pixels (partial patches discarded). Per patch: central-difference
/// gradients, magnitude binned over 8 orientations per 4x4 sub-cell with
/// linear sharing between the two nearest bins; L2-normalize, clamp at 0.2,
/// re-normalize. Flat patches (pre-norm < 1e-6) yield the zero descriptor.
std::vector<Descriptor> dense_descriptors(const Tensor& gray, int step = 8, int patch = 16);

struct Codebook {
    Tensor centroids; // (k, dim)
    int k() const { return centroids.empty() ? 0 : centroids.extent(0); }
    int dim() const { return centroids.empty() ? 0 : centroids.extent(1); }
};

/// k-means++ seeding from the seeded generator, then Lloyd iterations until
/// the assignment reaches a fixpoint or max_iters. Assignment ties go to the
/// lowest centroid index; an empty cluster is re-seeded to the point farthest
/// from its assigned centroid. If objective_history is non-null it receives
/// the sum of squared distances after each assignment step (non-increasing).
Codebook kmeans(const Tensor& points, int k, int max_iters, std::uint64_t seed,
                std::vector<double>* objective_history = nullptr);

/// Nearest-centroid counts (Euclidean, ties to the lowest index),
/// L1-normalized. No descriptors -> zero vector.
std::vector<float> encode_histogram(const Tensor& descriptors, const Codebook& codebook);
std::vector<float> encode_histogram(const std::vector<Descriptor>& descriptors,
                                    const Codebook& codebook);

struct SvmModel {
    Tensor weights; // (classes, dim)
    std::vector<float> bias;
    float lambda = 0.0f;
    int classes() const { return weights.empty() ? 0 : weights.extent(0); }
    int dim() const { return weights.empty() ? 0 : weights.extent(1); }
};

/// One-vs-rest primal stochastic subgradient descent with step 1/(lambda*t),
/// samples visited in seeded shuffled order per epoch.
SvmModel svm_train(const Tensor& features, const std::vector<int>& labels, double lambda,
                   int epochs, std::uint64_t seed);

/// argmax of w.x + b; ties go to the lowest class index.
int svm_predict(const SvmModel& model, const std::vector<float>& features);

struct BofModel {
    Codebook codebook;
    SvmModel svm;
};

void save_bof(const BofModel& model, const std::string& path);
BofModel load_bof(const std::string& path);

struct BofTrainOptions {
    int k = 256;
    double lambda = 1e-4;
    int svm_epochs = 100;
    int kmeans_iters = 30;
    int step = 8;
    int patch = 16;
    std::size_t max_descriptors = 200000; // deterministic even-stride subsample; 0 = all
    std::uint64_t seed = 0;
};

/// Full pipeline over a packed dataset: descriptors -> vocabulary ->
/// histograms -> one-vs-rest SVM.
BofModel train_pipeline(const PackedDataset& train, const BofTrainOptions& options);

std::vector<int> predict_pipeline(const BofModel& model, const PackedDataset& data,
                                  int step = 8, int patch = 16);

} // namespace foodrec::bof

#endif
