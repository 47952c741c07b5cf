#include "foodrec/metrics.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "foodrec/error.hpp"

namespace foodrec::metrics {

std::int64_t ConfusionMatrix::total() const {
    std::int64_t t = 0;
    for (auto v : counts) t += v;
    return t;
}

std::int64_t ConfusionMatrix::trace() const {
    std::int64_t t = 0;
    for (int i = 0; i < k; ++i) t += at(i, i);
    return t;
}

std::int64_t ConfusionMatrix::row_total(int i) const {
    std::int64_t t = 0;
    for (int j = 0; j < k; ++j) t += at(i, j);
    return t;
}

std::int64_t ConfusionMatrix::col_total(int j) const {
    std::int64_t t = 0;
    for (int i = 0; i < k; ++i) t += at(i, j);
    return t;
}

ConfusionMatrix confusion_matrix(const std::vector<int>& truths, const std::vector<int>& preds,
                                 int k) {
    if (truths.size() != preds.size())
        raise(Errc::shape_mismatch, "label sequences differ in length: " +
                                        std::to_string(truths.size()) + " vs " +
                                        std::to_string(preds.size()));
    if (k < 1) raise(Errc::invalid_argument, "class count must be >= 1");
    ConfusionMatrix m(k);
    for (std::size_t i = 0; i < truths.size(); ++i) {
        const int t = truths[i], p = preds[i];
        if (t < 0 || t >= k || p < 0 || p >= k)
            raise(Errc::out_of_range, "label out of range at position " + std::to_string(i));
        ++m.at(t, p);
    }
    return m;
}

double overall_accuracy(const ConfusionMatrix& m) {
    const std::int64_t total = m.total();
    if (total == 0) raise(Errc::empty_input, "confusion matrix is empty");
    return static_cast<double>(m.trace()) / static_cast<double>(total);
}

ClassRates recognition_rate(const ConfusionMatrix& m, int c) {
    if (c < 0 || c >= m.k) raise(Errc::out_of_range, "class index out of range");
    const std::int64_t total = m.total();
    const std::int64_t row = m.row_total(c);
    if (row == 0)
        raise(Errc::empty_input, "no samples of class " + std::to_string(c) + " in the matrix");
    if (total - row == 0)
        raise(Errc::empty_input, "no samples outside class " + std::to_string(c));
    const std::int64_t tp = m.at(c, c);
    const std::int64_t fp = m.col_total(c) - tp;
    ClassRates r;
    r.tpr = static_cast<double>(tp) / static_cast<double>(row);
    r.tnr = static_cast<double>(total - row - fp) / static_cast<double>(total - row);
    r.rr = 0.5 * (r.tpr + r.tnr);
    return r;
}

double mean_recognition_rate(const ConfusionMatrix& m) {
    if (m.k == 0) raise(Errc::empty_input, "confusion matrix is empty");
    double sum = 0.0;
    for (int c = 0; c < m.k; ++c) sum += recognition_rate(m, c).rr;
    return sum / m.k;
}

EvalReport build_report(const ConfusionMatrix& m, const std::vector<std::string>& classes) {
    if (static_cast<int>(classes.size()) != m.k)
        raise(Errc::shape_mismatch, "class-name count does not match matrix size");
    EvalReport r;
    r.classes = classes;
    r.matrix = m;
    r.overall_accuracy = overall_accuracy(m);
    for (int c = 0; c < m.k; ++c) r.per_class.push_back(recognition_rate(m, c));
    r.mean_rr = mean_recognition_rate(m);
    return r;
}

void emit_report(const EvalReport& report, const std::string& path) {
    nlohmann::json j;
    j["classes"] = report.classes;
    nlohmann::json rows = nlohmann::json::array();
    for (int i = 0; i < report.matrix.k; ++i) {
        nlohmann::json row = nlohmann::json::array();
        for (int c = 0; c < report.matrix.k; ++c) row.push_back(report.matrix.at(i, c));
        rows.push_back(std::move(row));
    }
    j["matrix"] = std::move(rows);
    j["overall_accuracy"] = report.overall_accuracy;
    nlohmann::json per = nlohmann::json::array();
    for (const auto& r : report.per_class)
        per.push_back({{"tpr", r.tpr}, {"tnr", r.tnr}, {"rr", r.rr}});
    j["per_class"] = std::move(per);
    j["mean_rr"] = report.mean_rr;

    std::ofstream os(path);
    if (!os) raise(Errc::io_error, "cannot open for writing: " + path);
    os << j.dump(2) << '\n';
    if (!os) raise(Errc::io_error, "write failed: " + path);
}

EvalReport parse_report(const std::string& path) {
    std::ifstream is(path);
    if (!is) raise(Errc::io_error, "cannot open for reading: " + path);
    nlohmann::json j;
    try {
        is >> j;
    } catch (const nlohmann::json::exception& e) {
        raise(Errc::undecodable, "malformed report JSON: " + std::string(e.what()));
    }
    EvalReport r;
    r.classes = j.at("classes").get<std::vector<std::string>>();
    const auto& rows = j.at("matrix");
    r.matrix = ConfusionMatrix(static_cast<int>(rows.size()));
    for (int i = 0; i < r.matrix.k; ++i)
        for (int c = 0; c < r.matrix.k; ++c)
            r.matrix.at(i, c) = rows.at(static_cast<std::size_t>(i))
                                    .at(static_cast<std::size_t>(c))
                                    .get<std::int64_t>();
    r.overall_accuracy = j.at("overall_accuracy").get<double>();
    for (const auto& p : j.at("per_class")) {
        ClassRates cr;
        cr.tpr = p.at("tpr").get<double>();
        cr.tnr = p.at("tnr").get<double>();
        cr.rr = p.at("rr").get<double>();
        r.per_class.push_back(cr);
    }
    r.mean_rr = j.at("mean_rr").get<double>();
    return r;
}

std::string format_report_text(const EvalReport& report) {
    std::ostringstream os;
    char buf[64];
    os << "overall accuracy: ";
    std::snprintf(buf, sizeof buf, "%.4f", report.overall_accuracy);
    os << buf << "\nmean recognition rate: ";
    std::snprintf(buf, sizeof buf, "%.4f", report.mean_rr);
    os << buf << "\n";
    for (std::size_t c = 0; c < report.classes.size(); ++c) {
        const auto& r = report.per_class[c];
        std::snprintf(buf, sizeof buf, "  %-16s tpr %.4f  tnr %.4f  rr %.4f",
                      report.classes[c].c_str(), r.tpr, r.tnr, r.rr);
        os << buf << "\n";
    }
    return os.str();
}

namespace {

void append_double(std::string& out, double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    out.append(buf, res.ptr);
}

} // namespace

void emit_curves(const TrainCurves& curves, const std::string& path) {
    std::string text = "epoch,train_loss,train_acc,test_loss,test_acc,eta\n";
    for (const auto& r : curves) {
        text += std::to_string(r.epoch);
        text += ',';
        append_double(text, r.train_loss);
        text += ',';
        append_double(text, r.train_acc);
        text += ',';
        append_double(text, r.test_loss);
        text += ',';
        append_double(text, r.test_acc);
        text += ',';
        append_double(text, r.eta);
        text += '\n';
    }
    std::ofstream os(path, std::ios::binary);
    if (!os) raise(Errc::io_error, "cannot open for writing: " + path);
    os << text;
    if (!os) raise(Errc::io_error, "write failed: " + path);
}

TrainCurves parse_curves(const std::string& path) {
    std::ifstream is(path);
    if (!is) raise(Errc::io_error, "cannot open for reading: " + path);
    std::string line;
    if (!std::getline(is, line) || line.rfind("epoch,", 0) != 0)
        raise(Errc::undecodable, "missing curves header in " + path);
    TrainCurves out;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        EpochRecord r;
        double fields[6];
        const char* p = line.c_str();
        for (int f = 0; f < 6; ++f) {
            char* end = nullptr;
            fields[f] = std::strtod(p, &end);
            if (end == p) raise(Errc::undecodable, "malformed curves row: " + line);
            p = end;
            if (f < 5) {
                if (*p != ',') raise(Errc::undecodable, "malformed curves row: " + line);
                ++p;
            }
        }
        r.epoch = static_cast<int>(fields[0]);
        r.train_loss = fields[1];
        r.train_acc = fields[2];
        r.test_loss = fields[3];
        r.test_acc = fields[4];
        r.eta = fields[5];
        out.push_back(r);
    }
    return out;
}

void emit_curves_chart(const TrainCurves& curves, const std::string& path) {
    const int width = 860, height = 480, margin = 50;
    const int plot_w = width - 2 * margin, plot_h = height - 2 * margin;
    const std::size_t n = curves.size();
    double max_loss = 1e-9;
    for (const auto& r : curves) max_loss = std::max({max_loss, r.train_loss, r.test_loss});

    auto x_of = [&](std::size_t i) {
        return margin + (n <= 1 ? 0.0
                                : static_cast<double>(i) * plot_w / static_cast<double>(n - 1));
    };
    auto y_of_frac = [&](double f) { return margin + (1.0 - f) * plot_h; };

    struct Series {
        const char* color;
        const char* label;
    };
    const Series series[4] = {{"#1f77b4", "train accuracy"},
                              {"#ff7f0e", "test accuracy"},
                              {"#2ca02c", "train loss"},
                              {"#d62728", "test loss"}};

    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
       << height << "\" viewBox=\"0 0 " << width << ' ' << height << "\">\n";
    os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    os << "<line x1=\"" << margin << "\" y1=\"" << margin + plot_h << "\" x2=\""
       << margin + plot_w << "\" y2=\"" << margin + plot_h
       << "\" stroke=\"#444\" stroke-width=\"1\"/>\n";
    os << "<line x1=\"" << margin << "\" y1=\"" << margin << "\" x2=\"" << margin << "\" y2=\""
       << margin + plot_h << "\" stroke=\"#444\" stroke-width=\"1\"/>\n";
    for (int s = 0; s < 4; ++s) {
        os << "<polyline fill=\"none\" stroke=\"" << series[s].color
           << "\" stroke-width=\"1.5\" points=\"";
        for (std::size_t i = 0; i < n; ++i) {
            double v = 0.0;
            switch (s) {
                case 0: v = curves[i].train_acc; break;
                case 1: v = curves[i].test_acc; break;
                case 2: v = curves[i].train_loss / max_loss; break;
                case 3: v = curves[i].test_loss / max_loss; break;
            }
            os << x_of(i) << ',' << y_of_frac(v) << ' ';
        }
        os << "\"/>\n";
        os << "<text x=\"" << margin + 8 + 200 * s << "\" y=\"" << margin - 14
           << "\" font-size=\"12\" fill=\"" << series[s].color << "\">" << series[s].label
           << "</text>\n";
    }
    os << "<text x=\"" << width / 2 << "\" y=\"" << height - 10
       << "\" font-size=\"12\" fill=\"#444\" text-anchor=\"middle\">epoch (accuracy on [0,1]; "
          "loss scaled by max "
       << max_loss << ")</text>\n";
    os << "</svg>\n";

    std::ofstream f(path, std::ios::binary);
    if (!f) raise(Errc::io_error, "cannot open for writing: " + path);
    f << os.str();
    if (!f) raise(Errc::io_error, "write failed: " + path);
}

// ---------------------------------------------------------------------------
// Published reference tables (metric oracles)
// ---------------------------------------------------------------------------

namespace {

constexpr std::int64_t kBofTable[10][10] = {
    {178, 1, 0, 4, 8, 0, 2, 6, 5, 7},   {2, 43, 1, 2, 4, 4, 5, 2, 1, 1},
    {1, 0, 28, 2, 0, 3, 2, 24, 1, 4},   {5, 0, 2, 72, 2, 2, 7, 12, 1, 1},
    {20, 1, 2, 7, 75, 1, 6, 6, 6, 1},   {1, 4, 3, 4, 1, 21, 6, 16, 1, 0},
    {5, 8, 4, 10, 4, 9, 76, 10, 2, 1},  {5, 0, 4, 5, 1, 1, 7, 221, 3, 4},
    {6, 1, 1, 2, 4, 1, 1, 18, 35, 1},   {11, 1, 2, 1, 1, 0, 1, 29, 1, 45}};

constexpr std::int64_t kCnnTable[10][10] = {
    {193, 6, 1, 0, 1, 0, 2, 1, 0, 6},   {4, 49, 0, 0, 4, 2, 3, 0, 0, 0},
    {0, 0, 64, 0, 0, 0, 1, 1, 0, 0},    {1, 0, 0, 87, 0, 1, 9, 6, 0, 0},
    {3, 1, 0, 2, 110, 2, 5, 1, 2, 0},   {0, 2, 0, 0, 0, 53, 1, 4, 0, 0},
    {1, 2, 0, 5, 0, 3, 109, 8, 0, 0},   {0, 0, 0, 3, 0, 1, 6, 239, 0, 1},
    {0, 0, 0, 1, 0, 0, 1, 5, 64, 0},    {3, 0, 0, 0, 0, 0, 0, 0, 0, 88}};

const std::array<double, 10> kBofRR = {0.89, 0.82, 0.71, 0.83, 0.79,
                                       0.67, 0.78, 0.87, 0.74, 0.73};
const std::array<double, 10> kCnnRR = {0.95, 0.89, 0.98, 0.91, 0.93,
                                       0.94, 0.91, 0.96, 0.95, 0.98};

ConfusionMatrix from_table(const std::int64_t table[10][10]) {
    ConfusionMatrix m(10);
    for (int i = 0; i < 10; ++i)
        for (int j = 0; j < 10; ++j) m.at(i, j) = table[i][j];
    return m;
}

} // namespace

ConfusionMatrix reference_bof_confusion() { return from_table(kBofTable); }
ConfusionMatrix reference_cnn_confusion() { return from_table(kCnnTable); }
const std::array<double, 10>& reference_bof_rr() { return kBofRR; }
const std::array<double, 10>& reference_cnn_rr() { return kCnnRR; }

} // namespace foodrec::metrics
