#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "suslab/core.hpp"
#include "suslab/data.hpp"
#include "suslab/net.hpp"
#include "suslab/poison.hpp"
#include "suslab/sparsity.hpp"

namespace suslab {

/// Victim-side sparsification settings. full_layers prunes every FC layer
/// (NVIDIA-style); fc_only prunes only the network's FC head
/// (PyTorch-style). Permutation is applied per layer before masking when
/// enabled.
struct VictimPipeline {
    enum class Library : std::uint8_t { full_layers = 0, fc_only = 1 };
    Library library = Library::full_layers;
    bool permute = false;
    SearchBudget budget;
};

struct SparsifyResult {
    Network net;
    std::vector<ColumnPermutation> perms;          // chosen per layer (identity if none)
    std::vector<std::optional<PruneMask>> masks;   // victim's fresh masks, targeted layers only
    ColumnPermutation input_perm;                  // apply to inputs at inference
};

namespace detail {

inline void permute_layer_rows(Layer& layer, const ColumnPermutation& p) {
    DenseMatrix w(layer.out_dim(), layer.in_dim());
    std::vector<double> bias(layer.out_dim());
    for (int j = 0; j < layer.out_dim(); ++j) {
        int src = p.map[j];
        for (int c = 0; c < layer.in_dim(); ++c) w.at(j, c) = layer.weights.at(src, c);
        bias[j] = layer.bias[src];
    }
    layer.weights = std::move(w);
    layer.bias = std::move(bias);
}

inline PruneMask permute_mask_rows(const PruneMask& m, const ColumnPermutation& p) {
    BinaryMatrix out(m.rows(), m.cols());
    for (int j = 0; j < m.rows(); ++j)
        for (int c = 0; c < m.cols(); ++c) out.at(j, c) = m.at(p.map[j], c);
    return PruneMask::from_bits(std::move(out));
}

}  // namespace detail

/// Victim-side sparsification. For each targeted layer: optional column
/// permutation search, then a fresh magnitude 2:4 mask computed from the
/// given weights (the victim never sees the attacker's masks), then masking.
/// A hidden layer's column permutation is folded into the previous layer's
/// rows and bias so the network function is preserved; a first-layer
/// permutation is reported as input_perm for inference-time reordering.
inline SparsifyResult sparsify(const Network& net, const VictimPipeline& pipe) {
    net.validate();
    SparsifyResult res;
    res.net = net;
    res.input_perm = ColumnPermutation::identity(net.input_dim());
    for (const Layer& l : net.layers) {
        res.perms.push_back(ColumnPermutation::identity(l.in_dim()));
        res.masks.emplace_back();
    }
    for (int k = 0; k < res.net.layer_count(); ++k) {
        bool targeted =
            pipe.library == VictimPipeline::Library::full_layers || k >= res.net.head_begin;
        if (!targeted) continue;
        Layer& l = res.net.layers[k];
        if (pipe.permute) {
            ColumnPermutation p = search_permutation(l.weights, pipe.budget);
            if (!p.is_identity()) {
                if (k == 0) {
                    res.input_perm = p;
                } else {
                    detail::permute_layer_rows(res.net.layers[k - 1], p);
                    if (res.masks[k - 1])
                        res.masks[k - 1] = detail::permute_mask_rows(*res.masks[k - 1], p);
                }
                l.weights = permute_columns(l.weights, p);
            }
            res.perms[k] = p;
        }
        PruneMask m = compute_mask_2to4(l.weights);
        l.weights = apply_mask(l.weights, m);
        res.masks[k] = std::move(m);
    }
    return res;
}

/// ACC / ASR / mag_r for one (model, dataset) pair.
struct MetricsReport {
    double acc = 0.0;
    double asr = 0.0;
    double mag_r = 1.0;                // L1-weighted aggregate over maskable layers
    std::vector<double> mag_r_layers;  // per layer
};

struct EvalOptions {
    const ColumnPermutation* input_perm = nullptr;
    std::uint64_t trigger_seed = 0xe7a1;
};

namespace detail {

inline std::vector<double> eval_input(const std::vector<double>& image, int dim,
                                      const ColumnPermutation* perm) {
    std::vector<double> x = pad_to(image, dim);
    if (!perm || perm->is_identity()) return x;
    std::vector<double> px(x.size());
    for (int j = 0; j < perm->size(); ++j) px[j] = x[perm->map[j]];
    return px;
}

/// Worker cap from SUS_LAB_THREADS; 1 when unset.
inline int worker_thread_cap() {
    const char* env = std::getenv("SUS_LAB_THREADS");
    if (!env) return 1;
    int cap = std::atoi(env);
    int hw = static_cast<int>(std::thread::hardware_concurrency());
    if (hw <= 0) hw = 1;
    return std::clamp(cap, 1, hw);
}

}  // namespace detail

/// Evaluate ACC on clean images, ASR on trigger-stamped images whose true
/// label differs from the target, and mag_r per maskable layer. Samples are
/// scored in parallel chunks with a fixed merge order, so results do not
/// depend on the thread count.
inline MetricsReport evaluate(const Network& net, const Dataset& data, const TriggerSpec& trigger,
                              const EvalOptions& opts = {}) {
    if (data.size() == 0) throw std::invalid_argument("evaluate: empty dataset");
    data.validate();
    MetricsReport rep;

    const std::size_t n = data.size();
    int threads = std::min<int>(detail::worker_thread_cap(), static_cast<int>(n));
    std::vector<std::size_t> acc_hits(threads, 0), asr_hits(threads, 0), asr_total(threads, 0);
    auto score_chunk = [&](int t) {
        std::size_t lo = n * t / threads, hi = n * (t + 1) / threads;
        for (std::size_t i = lo; i < hi; ++i) {
            std::vector<double> x =
                detail::eval_input(data.images[i], net.input_dim(), opts.input_perm);
            if (predict(net, x) == data.labels[i]) ++acc_hits[t];
            if (data.labels[i] == trigger.target) continue;
            std::vector<double> trig =
                apply_trigger(data.images[i], data.h, data.w, data.c, trigger,
                              trigger_seed_for(trigger, opts.trigger_seed, i));
            std::vector<double> xt = detail::eval_input(trig, net.input_dim(), opts.input_perm);
            ++asr_total[t];
            if (predict(net, xt) == trigger.target) ++asr_hits[t];
        }
    };
    if (threads <= 1) {
        score_chunk(0);
    } else {
        std::vector<std::thread> pool;
        for (int t = 0; t < threads; ++t) pool.emplace_back(score_chunk, t);
        for (auto& th : pool) th.join();
    }
    std::size_t acc_sum = 0, asr_sum = 0, asr_den = 0;
    for (int t = 0; t < threads; ++t) {
        acc_sum += acc_hits[t];
        asr_sum += asr_hits[t];
        asr_den += asr_total[t];
    }
    rep.acc = static_cast<double>(acc_sum) / static_cast<double>(n);
    rep.asr = asr_den == 0 ? 0.0 : static_cast<double>(asr_sum) / static_cast<double>(asr_den);

    double pruned_sum = 0.0, upper_sum = 0.0;
    for (const Layer& l : net.layers) {
        MagnitudeReport mr = magnitude_report(l.weights);
        rep.mag_r_layers.push_back(mr.mag_r);
        pruned_sum += mr.l1_pruned;
        upper_sum += mr.l1_upper;
    }
    rep.mag_r = upper_sum > 0.0 ? pruned_sum / upper_sum : 1.0;
    return rep;
}

/// Victim-side finetuning of an already-sparse model on clean data, with
/// updates confined to the retained positions so the 2:4 pattern survives.
/// Layers the victim never sparsified (no mask) train unrestricted.
inline MetricsReport finetune_check(Network& sparse_net,
                                    std::span<const std::optional<PruneMask>> victim_masks,
                                    const Dataset& clean_data, const TrainConfig& cfg,
                                    const Dataset& eval_data, const TriggerSpec& trigger,
                                    const EvalOptions& opts = {}) {
    if (victim_masks.size() != sparse_net.layers.size())
        throw std::invalid_argument("finetune_check: mask count mismatch");
    if (cfg.epochs > 0) {
        TrainSet ts;
        for (std::size_t i = 0; i < clean_data.size(); ++i) {
            std::vector<double> x =
                detail::eval_input(clean_data.images[i], sparse_net.input_dim(), opts.input_perm);
            ts.inputs.push_back(std::move(x));
            ts.labels.push_back(clean_data.labels[i]);
        }
        std::vector<LayerUpdate> gates;
        for (std::size_t k = 0; k < victim_masks.size(); ++k) {
            if (victim_masks[k])
                gates.push_back({LayerUpdate::Mode::masked, &victim_masks[k]->bits(), true});
            else
                gates.push_back({LayerUpdate::Mode::all, nullptr, true});
        }
        train(sparse_net, ts, gates, cfg);
    }
    return evaluate(sparse_net, eval_data, trigger, opts);
}

struct ReportRow {
    std::string label;
    MetricsReport metrics;
};

/// Aligned human-readable table: ACC%, ASR%, mag_r to 4 decimals.
inline std::string report_table(std::span<const ReportRow> rows) {
    std::size_t width = 5;
    for (const auto& r : rows) width = std::max(width, r.label.size());
    std::ostringstream os;
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%-*s  %7s  %7s  %7s  %s\n", static_cast<int>(width), "label",
                  "ACC%", "ASR%", "mag_r", "per-layer mag_r");
    os << buf;
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof(buf), "%-*s  %7.2f  %7.2f  %7.4f  ", static_cast<int>(width),
                      r.label.c_str(), 100.0 * r.metrics.acc, 100.0 * r.metrics.asr,
                      r.metrics.mag_r);
        os << buf;
        for (std::size_t i = 0; i < r.metrics.mag_r_layers.size(); ++i) {
            std::snprintf(buf, sizeof(buf), "%s%.4f", i ? "," : "", r.metrics.mag_r_layers[i]);
            os << buf;
        }
        os << "\n";
    }
    return os.str();
}

/// Machine-readable record: tab-delimited label, acc, asr, aggregate mag_r,
/// comma-joined per-layer mag_r. Numbers use shortest-exact formatting so a
/// parse round-trips to the same doubles.
inline std::string report_record(const ReportRow& row) {
    std::ostringstream os;
    char buf[64];
    os << row.label;
    for (double v : {row.metrics.acc, row.metrics.asr, row.metrics.mag_r}) {
        std::snprintf(buf, sizeof(buf), "%.17g", v);
        os << '\t' << buf;
    }
    os << '\t';
    for (std::size_t i = 0; i < row.metrics.mag_r_layers.size(); ++i) {
        std::snprintf(buf, sizeof(buf), "%s%.17g", i ? "," : "", row.metrics.mag_r_layers[i]);
        os << buf;
    }
    return os.str();
}

inline ReportRow parse_report_record(const std::string& line) {
    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
        std::size_t tab = line.find('\t', start);
        fields.push_back(line.substr(start, tab == std::string::npos ? tab : tab - start));
        if (tab == std::string::npos) break;
        start = tab + 1;
    }
    if (fields.size() != 5) throw std::runtime_error("report record: expected 5 fields");
    ReportRow row;
    row.label = fields[0];
    row.metrics.acc = std::stod(fields[1]);
    row.metrics.asr = std::stod(fields[2]);
    row.metrics.mag_r = std::stod(fields[3]);
    std::size_t pos = 0;
    const std::string& list = fields[4];
    while (pos < list.size()) {
        std::size_t comma = list.find(',', pos);
        row.metrics.mag_r_layers.push_back(
            std::stod(list.substr(pos, comma == std::string::npos ? comma : comma - pos)));
        if (comma == std::string::npos) break;
        pos = comma + 1;
    }
    return row;
}

}  // namespace suslab
