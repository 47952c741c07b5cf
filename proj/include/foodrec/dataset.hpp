#ifndef FOODREC_DATASET_HPP
#define FOODREC_DATASET_HPP

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "foodrec/rng.hpp"
#include "foodrec/tensor.hpp"

namespace foodrec {

/// Labeled image references for one dataset.
struct DatasetManifest {
    std::vector<std::string> classes;
    struct Item {
        std::string path;
        int class_index = 0;
    };
    std::vector<Item> items;
    int warnings = 0; // unreadable files skipped during ingestion
};

/// Bit-exact binary container of fixed-resolution RGB records.
struct PackedDataset {
    std::uint16_t width = 128;
    std::uint16_t height = 128;
    std::uint8_t channels = 3;
    std::vector<std::string> class_names;
    struct Record {
        std::uint8_t label = 0;
        std::vector<std::uint8_t> pixels; // width*height*channels bytes
    };
    std::vector<Record> records;

    std::size_t pixel_count() const {
        return static_cast<std::size_t>(width) * height * channels;
    }
    /// Record as floats in [0,1] (value/255), shape (H,W,C).
    Tensor record_tensor(std::size_t i) const;
    std::vector<int> labels() const;
};

/// classes = sorted subdirectory names; items in lexicographic path order.
DatasetManifest ingest_directory(const std::string& root);

/// Decode, stretch-resize to out_w x out_h (bilinear), scale to [0,1].
Tensor load_resize(const std::string& path, int out_h = 128, int out_w = 128);

/// Stratified per class: each class's items are shuffled with the seeded
/// generator and the first floor(train_frac*n_c) go to training.
std::pair<std::vector<int>, std::vector<int>>
stratified_split_indices(const std::vector<int>& labels, int class_count, double train_frac,
                         std::uint64_t seed);

std::pair<DatasetManifest, DatasetManifest> split(const DatasetManifest& manifest,
                                                  double train_frac, std::uint64_t seed);

std::pair<PackedDataset, PackedDataset> split_packed(const PackedDataset& data,
                                                     double train_frac, std::uint64_t seed);

/// Decodes and resizes every manifest item into a packed dataset.
PackedDataset pack_manifest(const DatasetManifest& manifest, int size = 128);

/// pack_manifest + save_packed; requires every item to be loadable.
void pack(const DatasetManifest& manifest, const std::string& path, int size = 128);

void save_packed(const PackedDataset& data, const std::string& path);
PackedDataset load_packed(const std::string& path);

/// Procedural ten-class benchmark: colored geometric shapes with randomized
/// placement, size, rotation, hue jitter and background noise. Three class
/// pairs share a shape and a luma-matched color, so grayscale-only features
/// cannot fully separate them while RGB models can.
PackedDataset make_synthetic(int classes, int per_class, std::uint64_t seed, int size = 128);

} // namespace foodrec

#endif
