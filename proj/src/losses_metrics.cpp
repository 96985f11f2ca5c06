#include "rangesam/losses.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

namespace rangesam::losses {

ClassWeights class_weights_from_freq(const std::vector<double>& freq) {
    ClassWeights cw;
    cw.w.resize(freq.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < freq.size(); ++i) {
        if (freq[i] < 0.0) throw std::invalid_argument("class frequency must be non-negative");
        cw.w[i] = 1.0 / std::sqrt(freq[i] + 1e-4);
        sum += cw.w[i];
    }
    if (freq.empty()) return cw;
    const double mean = sum / static_cast<double>(freq.size());
    for (auto& w : cw.w) w /= mean;
    return cw;
}

void ConfusionMatrix::add_batch(const std::vector<std::uint8_t>& truth,
                                const std::vector<std::uint8_t>& pred) {
    if (truth.size() != pred.size())
        throw std::invalid_argument("confusion matrix: truth/pred size mismatch");
    for (std::size_t i = 0; i < truth.size(); ++i) add(truth[i], pred[i]);
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
    if (other.c_ != c_) throw std::invalid_argument("confusion matrix: class count mismatch");
    for (std::size_t i = 0; i < m_.size(); ++i) m_[i] += other.m_[i];
}

std::int64_t ConfusionMatrix::total() const {
    std::int64_t t = 0;
    for (auto v : m_) t += v;
    return t;
}

MiouResult miou(const ConfusionMatrix& cm) {
    const int c = cm.num_classes();
    MiouResult r;
    r.per_class.assign(static_cast<std::size_t>(c), std::nan(""));
    r.present.assign(static_cast<std::size_t>(c), false);
    r.empty = cm.total() == 0;

    double sum = 0.0;
    int n_valid = 0;
    for (int k = 0; k < c; ++k) {
        std::int64_t tp = cm.at(k, k), fp = 0, fn = 0;
        for (int j = 0; j < c; ++j) {
            if (j == k) continue;
            fp += cm.at(j, k);
            fn += cm.at(k, j);
        }
        const std::int64_t den = tp + fp + fn;
        if (den == 0) continue;  // class absent from both truth and prediction
        r.present[static_cast<std::size_t>(k)] = true;
        r.per_class[static_cast<std::size_t>(k)] = static_cast<double>(tp) / static_cast<double>(den);
        sum += r.per_class[static_cast<std::size_t>(k)];
        ++n_valid;
    }
    r.mean = n_valid ? sum / n_valid : 0.0;
    return r;
}

std::string format_miou_table(const MiouResult& r) {
    const auto& names = kitti::class_names();
    std::ostringstream os;
    char buf[32];
    for (std::size_t k = 0; k < r.per_class.size(); ++k) {
        const std::string name = k < names.size() ? names[k] : "c" + std::to_string(k);
        os << name;
        for (std::size_t s = name.size(); s < 7; ++s) os << ' ';
    }
    os << "mIoU\n";
    for (std::size_t k = 0; k < r.per_class.size(); ++k) {
        if (r.present[k])
            std::snprintf(buf, sizeof buf, "%-7.1f", 100.0 * r.per_class[k]);
        else
            std::snprintf(buf, sizeof buf, "%-7s", "-");
        os << buf;
    }
    std::snprintf(buf, sizeof buf, "%.1f", 100.0 * r.mean);
    os << buf;
    if (r.empty) os << "  (no counted pixels)";
    os << "\n";
    return os.str();
}

std::string format_miou_json(const MiouResult& r) {
    const auto& names = kitti::class_names();
    std::ostringstream os;
    os << "{\"per_class\":{";
    bool first = true;
    for (std::size_t k = 0; k < r.per_class.size(); ++k) {
        if (!first) os << ",";
        first = false;
        const std::string name = k < names.size() ? names[k] : "c" + std::to_string(k);
        os << "\"" << name << "\":";
        if (r.present[k])
            os << r.per_class[k];
        else
            os << "null";
    }
    os << "},\"miou\":" << r.mean << ",\"empty\":" << (r.empty ? "true" : "false") << "}";
    return os.str();
}

std::vector<std::uint8_t> boundary_mask(const std::vector<std::uint8_t>& target, int b, int h, int w) {
    if (target.size() != static_cast<std::size_t>(b) * h * w)
        throw std::invalid_argument("boundary_mask: target size mismatch");
    std::vector<std::uint8_t> mask(target.size(), 0);
    const std::int64_t plane = static_cast<std::int64_t>(h) * w;
    for (int n = 0; n < b; ++n) {
        const std::uint8_t* t = target.data() + static_cast<std::int64_t>(n) * plane;
        std::uint8_t* m = mask.data() + static_cast<std::int64_t>(n) * plane;
        for (int v = 0; v < h; ++v) {
            for (int u = 0; u < w; ++u) {
                const std::uint8_t c = t[static_cast<std::int64_t>(v) * w + u];
                if (c == kitti::kIgnore) continue;
                auto differs = [&](int vv, int uu) {
                    if (vv < 0 || vv >= h || uu < 0 || uu >= w) return false;
                    const std::uint8_t nb = t[static_cast<std::int64_t>(vv) * w + uu];
                    return nb != kitti::kIgnore && nb != c;
                };
                if (differs(v - 1, u) || differs(v + 1, u) || differs(v, u - 1) || differs(v, u + 1))
                    m[static_cast<std::int64_t>(v) * w + u] = 1;
            }
        }
    }
    return mask;
}

std::vector<std::uint8_t> downsample_labels(const std::vector<std::uint8_t>& target, int b, int h,
                                            int w, int out_h, int out_w) {
    if (target.size() != static_cast<std::size_t>(b) * h * w)
        throw std::invalid_argument("downsample_labels: target size mismatch");
    if (out_h < 1 || out_w < 1 || h % out_h != 0 || w % out_w != 0)
        throw std::invalid_argument("downsample_labels: output must evenly divide input");
    const int fh = h / out_h, fw = w / out_w;
    std::vector<std::uint8_t> out(static_cast<std::size_t>(b) * out_h * out_w);
    for (int n = 0; n < b; ++n)
        for (int v = 0; v < out_h; ++v)
            for (int u = 0; u < out_w; ++u)
                out[(static_cast<std::size_t>(n) * out_h + v) * out_w + u] =
                    target[(static_cast<std::size_t>(n) * h + v * fh) * w + u * fw];
    return out;
}

} // namespace rangesam::losses
