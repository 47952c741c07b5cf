#include "foodrec/bof.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include "foodrec/binio.hpp"
#include "foodrec/error.hpp"
#include "foodrec/parallel.hpp"
#include "foodrec/rng.hpp"

namespace foodrec::bof {

namespace {
constexpr double kTwoPi = 6.283185307179586476925286766559;
}

Tensor grayscale(const Tensor& image) {
    if (image.rank() != 3 || image.extent(2) != 3)
        raise(Errc::shape_mismatch, "grayscale expects (H,W,3), got " + image.shape_string());
    const int h = image.extent(0), w = image.extent(1);
    Tensor out({h, w});
    const float* src = image.data();
    float* dst = out.data();
    const std::size_t n = static_cast<std::size_t>(h) * w;
    for (std::size_t i = 0; i < n; ++i)
        dst[i] = 0.299f * src[i * 3] + 0.587f * src[i * 3 + 1] + 0.114f * src[i * 3 + 2];
    return out;
}

std::vector<Descriptor> dense_descriptors(const Tensor& gray, int step, int patch) {
    if (gray.rank() != 2)
        raise(Errc::shape_mismatch, "dense_descriptors expects (H,W), got " + gray.shape_string());
    if (step < 1) raise(Errc::invalid_argument, "step must be >= 1");
    if (patch < 4 || patch % 4 != 0)
        raise(Errc::invalid_argument, "patch must be a positive multiple of 4");
    const int h = gray.extent(0), w = gray.extent(1);
    if (h < patch || w < patch)
        raise(Errc::shape_mismatch, "image " + gray.shape_string() + " smaller than patch " +
                                        std::to_string(patch));
    const float* img = gray.data();
    auto at = [&](int y, int x) { return img[static_cast<std::size_t>(y) * w + x]; };

    const int cell = patch / 4;
    const int gy_count = (h - patch) / step + 1;
    const int gx_count = (w - patch) / step + 1;
    std::vector<Descriptor> out;
    out.reserve(static_cast<std::size_t>(gy_count) * gx_count);
    for (int gy = 0; gy < gy_count; ++gy) {
        for (int gx = 0; gx < gx_count; ++gx) {
            const int y0 = gy * step, x0 = gx * step;
            Descriptor d;
            d.grid_x = x0;
            d.grid_y = y0;
            for (int py = 0; py < patch; ++py) {
                for (int px = 0; px < patch; ++px) {
                    const int y = y0 + py, x = x0 + px;
                    const int xm = x > 0 ? x - 1 : 0, xp = x < w - 1 ? x + 1 : w - 1;
                    const int ym = y > 0 ? y - 1 : 0, yp = y < h - 1 ? y + 1 : h - 1;
                    const float dx = 0.5f * (at(y, xp) - at(y, xm));
                    const float dy = 0.5f * (at(yp, x) - at(ym, x));
                    const float mag = std::sqrt(dx * dx + dy * dy);
                    if (mag == 0.0f) continue;
                    double theta = std::atan2(static_cast<double>(dy), static_cast<double>(dx));
                    if (theta < 0.0) theta += kTwoPi;
                    double fb = theta / kTwoPi * 8.0;
                    if (fb >= 8.0) fb -= 8.0;
                    const int b0 = static_cast<int>(fb);
                    const int b1 = (b0 + 1) & 7;
                    const float frac = static_cast<float>(fb - b0);
                    const int ci = (py / cell) * 4 + (px / cell);
                    d.v[static_cast<std::size_t>(ci * 8 + b0)] += mag * (1.0f - frac);
                    d.v[static_cast<std::size_t>(ci * 8 + b1)] += mag * frac;
                }
            }
            double norm2 = 0.0;
            for (float v : d.v) norm2 += static_cast<double>(v) * v;
            const double norm = std::sqrt(norm2);
            if (norm < 1e-6) {
                d.v.fill(0.0f);
            } else {
                const float inv = static_cast<float>(1.0 / norm);
                for (auto& v : d.v) {
                    v *= inv;
                    if (v > 0.2f) v = 0.2f;
                }
                double renorm2 = 0.0;
                for (float v : d.v) renorm2 += static_cast<double>(v) * v;
                const float inv2 = static_cast<float>(1.0 / std::sqrt(renorm2));
                for (auto& v : d.v) v *= inv2;
            }
            out.push_back(d);
        }
    }
    return out;
}

namespace {

double dist2(const float* a, const double* b, int dim) {
    double s = 0.0;
    for (int i = 0; i < dim; ++i) {
        const double d = static_cast<double>(a[i]) - b[i];
        s += d * d;
    }
    return s;
}

} // namespace

Codebook kmeans(const Tensor& points, int k, int max_iters, std::uint64_t seed,
                std::vector<double>* objective_history) {
    if (points.rank() != 2) raise(Errc::shape_mismatch, "kmeans expects (N,D) points");
    const int n = points.extent(0), dim = points.extent(1);
    if (k < 1) raise(Errc::invalid_argument, "k must be >= 1");
    if (n < k)
        raise(Errc::invalid_argument, "kmeans needs at least k=" + std::to_string(k) +
                                          " points, got " + std::to_string(n));
    const float* pts = points.data();
    Rng rng(seed);

    // k-means++ seeding
    std::vector<std::vector<double>> centroids(static_cast<std::size_t>(k),
                                               std::vector<double>(static_cast<std::size_t>(dim)));
    std::vector<double> best_d2(static_cast<std::size_t>(n),
                                std::numeric_limits<double>::infinity());
    std::vector<char> chosen(static_cast<std::size_t>(n), 0);
    {
        const int first = static_cast<int>(rng.next_index(static_cast<std::size_t>(n)));
        chosen[static_cast<std::size_t>(first)] = 1;
        for (int d = 0; d < dim; ++d)
            centroids[0][static_cast<std::size_t>(d)] =
                pts[static_cast<std::size_t>(first) * dim + d];
        for (int i = 0; i < n; ++i)
            best_d2[static_cast<std::size_t>(i)] =
                dist2(pts + static_cast<std::size_t>(i) * dim, centroids[0].data(), dim);
        for (int c = 1; c < k; ++c) {
            double total = 0.0;
            for (int i = 0; i < n; ++i)
                if (!chosen[static_cast<std::size_t>(i)]) total += best_d2[static_cast<std::size_t>(i)];
            int pick = -1;
            if (total > 0.0) {
                const double r = rng.next_double() * total;
                double cum = 0.0;
                for (int i = 0; i < n; ++i) {
                    if (chosen[static_cast<std::size_t>(i)]) continue;
                    cum += best_d2[static_cast<std::size_t>(i)];
                    if (cum > r) {
                        pick = i;
                        break;
                    }
                }
            }
            if (pick < 0) { // duplicates or rounding: first unchosen point
                rng.next_double(); // keep the draw count fixed
                for (int i = 0; i < n && pick < 0; ++i)
                    if (!chosen[static_cast<std::size_t>(i)]) pick = i;
            }
            chosen[static_cast<std::size_t>(pick)] = 1;
            for (int d = 0; d < dim; ++d)
                centroids[static_cast<std::size_t>(c)][static_cast<std::size_t>(d)] =
                    pts[static_cast<std::size_t>(pick) * dim + d];
            for (int i = 0; i < n; ++i) {
                const double d2 =
                    dist2(pts + static_cast<std::size_t>(i) * dim,
                          centroids[static_cast<std::size_t>(c)].data(), dim);
                if (d2 < best_d2[static_cast<std::size_t>(i)])
                    best_d2[static_cast<std::size_t>(i)] = d2;
            }
        }
    }

    std::vector<int> assign(static_cast<std::size_t>(n), -1);
    std::vector<double> assign_d2(static_cast<std::size_t>(n), 0.0);
    for (int iter = 0; iter < max_iters; ++iter) {
        // Assignment: parallel over points, ties to the lowest index.
        bool changed = false;
        std::vector<char> flip(static_cast<std::size_t>(n), 0);
        par::parallel_for(n, [&](std::int64_t lo, std::int64_t hi) {
            for (std::int64_t i = lo; i < hi; ++i) {
                const float* p = pts + static_cast<std::size_t>(i) * dim;
                int best = 0;
                double bd = dist2(p, centroids[0].data(), dim);
                for (int c = 1; c < k; ++c) {
                    const double d2 = dist2(p, centroids[static_cast<std::size_t>(c)].data(), dim);
                    if (d2 < bd) {
                        bd = d2;
                        best = c;
                    }
                }
                if (assign[static_cast<std::size_t>(i)] != best) flip[static_cast<std::size_t>(i)] = 1;
                assign[static_cast<std::size_t>(i)] = best;
                assign_d2[static_cast<std::size_t>(i)] = bd;
            }
        });
        for (char f : flip)
            if (f) {
                changed = true;
                break;
            }
        if (objective_history) {
            double obj = 0.0;
            for (double d : assign_d2) obj += d;
            objective_history->push_back(obj);
        }
        if (!changed && iter > 0) break;

        // Update: means in double, accumulated in point order.
        std::vector<std::vector<double>> sums(static_cast<std::size_t>(k),
                                              std::vector<double>(static_cast<std::size_t>(dim), 0.0));
        std::vector<int> counts(static_cast<std::size_t>(k), 0);
        for (int i = 0; i < n; ++i) {
            const int c = assign[static_cast<std::size_t>(i)];
            const float* p = pts + static_cast<std::size_t>(i) * dim;
            auto& s = sums[static_cast<std::size_t>(c)];
            for (int d = 0; d < dim; ++d) s[static_cast<std::size_t>(d)] += p[d];
            ++counts[static_cast<std::size_t>(c)];
        }
        std::vector<char> reused(static_cast<std::size_t>(n), 0);
        for (int c = 0; c < k; ++c) {
            if (counts[static_cast<std::size_t>(c)] > 0) {
                for (int d = 0; d < dim; ++d)
                    centroids[static_cast<std::size_t>(c)][static_cast<std::size_t>(d)] =
                        sums[static_cast<std::size_t>(c)][static_cast<std::size_t>(d)] /
                        counts[static_cast<std::size_t>(c)];
            } else {
                // Re-seed to the point farthest from its assigned centroid.
                int far = -1;
                double far_d = -1.0;
                for (int i = 0; i < n; ++i) {
                    if (reused[static_cast<std::size_t>(i)]) continue;
                    if (assign_d2[static_cast<std::size_t>(i)] > far_d) {
                        far_d = assign_d2[static_cast<std::size_t>(i)];
                        far = i;
                    }
                }
                reused[static_cast<std::size_t>(far)] = 1;
                for (int d = 0; d < dim; ++d)
                    centroids[static_cast<std::size_t>(c)][static_cast<std::size_t>(d)] =
                        pts[static_cast<std::size_t>(far) * dim + d];
            }
        }
    }

    Codebook cb;
    cb.centroids = Tensor({k, dim});
    for (int c = 0; c < k; ++c)
        for (int d = 0; d < dim; ++d)
            cb.centroids(c, d) =
                static_cast<float>(centroids[static_cast<std::size_t>(c)][static_cast<std::size_t>(d)]);
    return cb;
}

std::vector<float> encode_histogram(const Tensor& descriptors, const Codebook& codebook) {
    if (codebook.k() < 1) raise(Errc::invalid_argument, "empty codebook");
    const int k = codebook.k(), dim = codebook.dim();
    std::vector<float> hist(static_cast<std::size_t>(k), 0.0f);
    if (descriptors.empty()) return hist;
    if (descriptors.rank() != 2 || descriptors.extent(1) != dim)
        raise(Errc::shape_mismatch, "descriptor dimension " + descriptors.shape_string() +
                                        " does not match codebook dim " + std::to_string(dim));
    const int n = descriptors.extent(0);
    const float* pts = descriptors.data();
    const float* cents = codebook.centroids.data();
    for (int i = 0; i < n; ++i) {
        const float* p = pts + static_cast<std::size_t>(i) * dim;
        int best = 0;
        double bd = std::numeric_limits<double>::infinity();
        for (int c = 0; c < k; ++c) {
            const float* q = cents + static_cast<std::size_t>(c) * dim;
            double s = 0.0;
            for (int d = 0; d < dim; ++d) {
                const double diff = static_cast<double>(p[d]) - q[d];
                s += diff * diff;
            }
            if (s < bd) {
                bd = s;
                best = c;
            }
        }
        hist[static_cast<std::size_t>(best)] += 1.0f;
    }
    for (auto& v : hist) v /= static_cast<float>(n);
    return hist;
}

std::vector<float> encode_histogram(const std::vector<Descriptor>& descriptors,
                                    const Codebook& codebook) {
    if (descriptors.empty()) return encode_histogram(Tensor(), codebook);
    Tensor t({static_cast<int>(descriptors.size()), 128});
    for (std::size_t i = 0; i < descriptors.size(); ++i)
        std::copy(descriptors[i].v.begin(), descriptors[i].v.end(),
                  t.data() + i * 128);
    return encode_histogram(t, codebook);
}

SvmModel svm_train(const Tensor& features, const std::vector<int>& labels, double lambda,
                   int epochs, std::uint64_t seed) {
    if (features.rank() != 2 || features.extent(0) != static_cast<int>(labels.size()))
        raise(Errc::shape_mismatch, "svm_train: features rows must match labels");
    if (!(lambda > 0.0)) raise(Errc::invalid_argument, "lambda must be positive");
    if (epochs < 1) raise(Errc::invalid_argument, "epochs must be >= 1");
    const int n = features.extent(0), dim = features.extent(1);
    const std::set<int> distinct(labels.begin(), labels.end());
    if (distinct.size() < 2)
        raise(Errc::invalid_argument, "svm_train needs at least two classes present");
    const int classes = *distinct.rbegin() + 1;
    if (*distinct.begin() < 0) raise(Errc::out_of_range, "negative label");

    SvmModel model;
    model.weights = Tensor({classes, dim});
    model.bias.assign(static_cast<std::size_t>(classes), 0.0f);
    model.lambda = static_cast<float>(lambda);
    const float* x = features.data();
    Rng rng(seed);

    // The bias rides as an augmented constant feature, so the 1/(lambda*t)
    // schedule keeps it as well-conditioned as the weights.
    for (int c = 0; c < classes; ++c) {
        std::vector<float> w(static_cast<std::size_t>(dim) + 1, 0.0f);
        long long t = 0;
        std::vector<int> order(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
        for (int e = 0; e < epochs; ++e) {
            rng.shuffle(order);
            for (int oi = 0; oi < n; ++oi) {
                const int i = order[static_cast<std::size_t>(oi)];
                ++t;
                const double eta = 1.0 / (lambda * static_cast<double>(t));
                const double y = labels[static_cast<std::size_t>(i)] == c ? 1.0 : -1.0;
                const float* xi = x + static_cast<std::size_t>(i) * dim;
                double dot = static_cast<double>(w[static_cast<std::size_t>(dim)]);
                for (int d = 0; d < dim; ++d) dot += static_cast<double>(w[static_cast<std::size_t>(d)]) * xi[d];
                const double margin = y * dot;
                const float shrink = static_cast<float>(1.0 - eta * lambda);
                if (margin < 1.0) {
                    const float push = static_cast<float>(eta * y);
                    for (int d = 0; d < dim; ++d)
                        w[static_cast<std::size_t>(d)] = shrink * w[static_cast<std::size_t>(d)] + push * xi[d];
                    w[static_cast<std::size_t>(dim)] =
                        shrink * w[static_cast<std::size_t>(dim)] + push;
                } else {
                    for (int d = 0; d <= dim; ++d)
                        w[static_cast<std::size_t>(d)] = shrink * w[static_cast<std::size_t>(d)];
                }
            }
        }
        for (int d = 0; d < dim; ++d) model.weights(c, d) = w[static_cast<std::size_t>(d)];
        model.bias[static_cast<std::size_t>(c)] = w[static_cast<std::size_t>(dim)];
    }
    return model;
}

int svm_predict(const SvmModel& model, const std::vector<float>& features) {
    const int classes = model.classes(), dim = model.dim();
    if (static_cast<int>(features.size()) != dim)
        raise(Errc::shape_mismatch, "svm_predict: feature dimension " +
                                        std::to_string(features.size()) + " does not match " +
                                        std::to_string(dim));
    int best = 0;
    double best_score = -std::numeric_limits<double>::infinity();
    for (int c = 0; c < classes; ++c) {
        const float* w = model.weights.data() + static_cast<std::size_t>(c) * dim;
        double s = model.bias[static_cast<std::size_t>(c)];
        for (int d = 0; d < dim; ++d) s += static_cast<double>(w[d]) * features[static_cast<std::size_t>(d)];
        if (s > best_score) {
            best_score = s;
            best = c;
        }
    }
    return best;
}

void save_bof(const BofModel& model, const std::string& path) {
    auto os = binio::open_out(path);
    binio::write_bytes(os, "BOFM1\0", 6);
    const int k = model.codebook.k(), dim = model.codebook.dim();
    binio::write_u32(os, static_cast<std::uint32_t>(k));
    binio::write_u32(os, static_cast<std::uint32_t>(dim));
    for (float v : model.codebook.centroids.values()) binio::write_f32(os, v);
    const int classes = model.svm.classes();
    if (model.svm.dim() != k)
        raise(Errc::shape_inconsistent, "svm dimension does not match vocabulary size");
    binio::write_u8(os, static_cast<std::uint8_t>(classes));
    for (int c = 0; c < classes; ++c) {
        for (int d = 0; d < k; ++d) binio::write_f32(os, model.svm.weights(c, d));
        binio::write_f32(os, model.svm.bias[static_cast<std::size_t>(c)]);
    }
    if (!os) raise(Errc::io_error, "write failed: " + path);
}

BofModel load_bof(const std::string& path) {
    auto is = binio::open_in(path);
    binio::expect_magic(is, "BOFM1", "bof model");
    const std::uint32_t k = binio::read_u32(is, "vocabulary size");
    const std::uint32_t dim = binio::read_u32(is, "descriptor dim");
    if (k == 0 || k > (1u << 20) || dim == 0 || dim > (1u << 16))
        raise(Errc::shape_inconsistent, "implausible bof header");
    BofModel m;
    m.codebook.centroids = Tensor({static_cast<int>(k), static_cast<int>(dim)});
    for (auto& v : m.codebook.centroids.values()) v = binio::read_f32(is, "centroids");
    const std::uint8_t classes = binio::read_u8(is, "class count");
    if (classes == 0) raise(Errc::shape_inconsistent, "bof model has no classes");
    m.svm.weights = Tensor({static_cast<int>(classes), static_cast<int>(k)});
    m.svm.bias.resize(classes);
    for (int c = 0; c < classes; ++c) {
        for (std::uint32_t d = 0; d < k; ++d)
            m.svm.weights(c, static_cast<int>(d)) = binio::read_f32(is, "svm weights");
        m.svm.bias[static_cast<std::size_t>(c)] = binio::read_f32(is, "svm bias");
    }
    return m;
}

namespace {

std::vector<std::vector<Descriptor>> dataset_descriptors(const PackedDataset& data, int step,
                                                         int patch) {
    std::vector<std::vector<Descriptor>> all(data.records.size());
    par::parallel_for(static_cast<std::int64_t>(data.records.size()),
                      [&](std::int64_t lo, std::int64_t hi) {
                          for (std::int64_t i = lo; i < hi; ++i) {
                              const Tensor gray =
                                  grayscale(data.record_tensor(static_cast<std::size_t>(i)));
                              all[static_cast<std::size_t>(i)] =
                                  dense_descriptors(gray, step, patch);
                          }
                      });
    return all;
}

} // namespace

BofModel train_pipeline(const PackedDataset& train, const BofTrainOptions& options) {
    if (train.records.empty()) raise(Errc::empty_input, "bof training set is empty");
    const auto per_image = dataset_descriptors(train, options.step, options.patch);

    std::size_t total = 0;
    for (const auto& v : per_image) total += v.size();
    std::size_t keep = total;
    std::size_t stride = 1;
    if (options.max_descriptors > 0 && total > options.max_descriptors) {
        stride = (total + options.max_descriptors - 1) / options.max_descriptors;
        keep = (total + stride - 1) / stride;
    }
    Tensor pool({static_cast<int>(keep), 128});
    std::size_t src_idx = 0, dst = 0;
    for (const auto& v : per_image)
        for (const auto& d : v) {
            if (src_idx % stride == 0) {
                std::copy(d.v.begin(), d.v.end(), pool.data() + dst * 128);
                ++dst;
            }
            ++src_idx;
        }

    BofModel model;
    model.codebook = kmeans(pool, options.k, options.kmeans_iters, options.seed);

    Tensor hists({static_cast<int>(train.records.size()), options.k});
    par::parallel_for(static_cast<std::int64_t>(train.records.size()),
                      [&](std::int64_t lo, std::int64_t hi) {
                          for (std::int64_t i = lo; i < hi; ++i) {
                              const auto h = encode_histogram(
                                  per_image[static_cast<std::size_t>(i)], model.codebook);
                              std::copy(h.begin(), h.end(),
                                        hists.data() + static_cast<std::size_t>(i) * options.k);
                          }
                      });
    model.svm = svm_train(hists, train.labels(), options.lambda, options.svm_epochs,
                          options.seed + 1);
    return model;
}

std::vector<int> predict_pipeline(const BofModel& model, const PackedDataset& data, int step,
                                  int patch) {
    std::vector<int> out(data.records.size());
    par::parallel_for(static_cast<std::int64_t>(data.records.size()),
                      [&](std::int64_t lo, std::int64_t hi) {
                          for (std::int64_t i = lo; i < hi; ++i) {
                              const Tensor gray =
                                  grayscale(data.record_tensor(static_cast<std::size_t>(i)));
                              const auto descs = dense_descriptors(gray, step, patch);
                              const auto hist = encode_histogram(descs, model.codebook);
                              out[static_cast<std::size_t>(i)] = svm_predict(model.svm, hist);
                          }
                      });
    return out;
}

} // namespace foodrec::bof
