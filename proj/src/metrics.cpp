#include "tempsr/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <sstream>

#include "tempsr/error.hpp"

namespace tempsr {

namespace {

void require_same_grid(const RainMap& a, const RainMap& b) {
    if (a.height != b.height || a.width != b.width || a.values.size() != b.values.size())
        throw DataError("prediction and truth differ in shape");
}

}  // namespace

ContingencyCounts contingency(const RainMap& pred, const RainMap& truth, double threshold) {
    require_same_grid(pred, truth);
    if (!(threshold > 0.0)) throw UsageError("threshold must be > 0");
    ContingencyCounts c;
    for (std::size_t i = 0; i < pred.values.size(); ++i) {
        const bool p = double(pred.values[i]) > threshold;
        const bool t = truth.values[i] > 0.0f;
        c.hits += p && t;
        c.false_alarms += p && !t;
        c.misses += !p && t;
    }
    return c;
}

std::optional<double> pod(const ContingencyCounts& c) {
    const auto d = c.hits + c.misses;
    if (d == 0) return std::nullopt;
    return double(c.hits) / double(d);
}

double far(const ContingencyCounts& c) {
    const auto d = c.hits + c.false_alarms;
    return d == 0 ? 0.0 : double(c.false_alarms) / double(d);
}

std::optional<double> csi(const ContingencyCounts& c) {
    const auto d = c.hits + c.false_alarms + c.misses;
    if (d == 0) return std::nullopt;
    return double(c.hits) / double(d);
}

double mae_map(const RainMap& pred, const RainMap& truth) {
    require_same_grid(pred, truth);
    double s = 0.0;
    for (std::size_t i = 0; i < pred.values.size(); ++i) s += std::fabs(double(pred.values[i]) - double(truth.values[i]));
    return s / double(pred.values.size());
}

ScoreReport evaluate(const std::string& name, const Interpolator& method, const std::vector<TripletSample>& samples,
                     double threshold) {
    if (samples.empty()) throw DataError("cannot evaluate on an empty sample list");
    std::vector<std::size_t> order(samples.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return sample_id_less(samples[a], samples[b]); });

    ScoreReport r;
    r.method = name;
    r.threshold = threshold;
    r.sample_count = samples.size();
    double abs_sum = 0.0;
    std::size_t cells = 0;
    for (std::size_t i : order) {
        const TripletSample& s = samples[i];
        const RainMap pred = method(s);
        require_same_grid(pred, s.target);
        for (std::size_t k = 0; k < pred.values.size(); ++k)
            abs_sum += std::fabs(double(pred.values[k]) - double(s.target.values[k]));
        cells += pred.values.size();
        r.counts += contingency(pred, s.target, threshold);
    }
    r.mae = abs_sum / double(cells);
    r.pod = pod(r.counts);
    r.far = far(r.counts);
    r.csi = csi(r.counts);
    return r;
}

namespace {

std::string fixed(double v, int digits) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(digits) << v;
    return os.str();
}

std::string opt(const std::optional<double>& v, int digits) { return v ? fixed(*v, digits) : "n/a"; }

}  // namespace

void write_report_table(const std::vector<ScoreReport>& reports, std::ostream& out) {
    std::size_t name_w = std::string("Methodology").size();
    for (const auto& r : reports) name_w = std::max(name_w, r.method.size());
    // Arrow glyphs are 3 bytes in UTF-8 but one column wide.
    auto cell = [](const std::string& s, std::size_t width, std::size_t glyph_bytes = 0) {
        const std::size_t cols = s.size() - glyph_bytes;
        return s + std::string(width > cols ? width - cols : 0, ' ');
    };
    out << cell("Methodology", name_w) << " | " << cell("MAE(mm/h)↓", 10, 2) << " | " << cell("CSI ↑", 6, 2) << " | "
        << cell("POD ↑", 6, 2) << " | " << cell("FAR ↓", 6, 2) << '\n';
    out << std::string(name_w, '-') << "-+-" << std::string(10, '-') << "-+-" << std::string(6, '-') << "-+-"
        << std::string(6, '-') << "-+-" << std::string(6, '-') << '\n';
    for (const auto& r : reports) {
        out << cell(r.method, name_w) << " | " << cell(fixed(r.mae, 4), 10) << " | " << cell(opt(r.csi, 4), 6) << " | "
            << cell(opt(r.pod, 4), 6) << " | " << cell(fixed(r.far, 4), 6) << '\n';
    }
}

void write_report_csv(const std::vector<ScoreReport>& reports, std::ostream& out) {
    out << "method,mae,csi,pod,far,samples,threshold\n";
    auto num = [](double v) {
        std::ostringstream os;
        os << std::setprecision(10) << v;
        return os.str();
    };
    for (const auto& r : reports) {
        out << r.method << ',' << num(r.mae) << ',' << (r.csi ? num(*r.csi) : "nan") << ','
            << (r.pod ? num(*r.pod) : "nan") << ',' << num(r.far) << ',' << r.sample_count << ',' << num(r.threshold)
            << '\n';
    }
}

}  // namespace tempsr
