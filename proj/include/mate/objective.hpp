#pragma once

#include <map>
#include <set>
#include <utility>
#include <vector>

#include "mate/data.hpp"
#include "mate/errors.hpp"
#include "mate/net.hpp"

namespace mate {

/// (camera, intra-camera identity) pair; the key every association and
/// multi-label structure is indexed by.
using identity_key = std::pair<int, int>;

/// The set Y of (camera, identity) labels carried by all images of one
/// identity after cross-camera association. Always contains the owner,
/// holds at most one label per camera, and is kept sorted by camera.
struct multi_label_set {
    int owner_camera = 0;
    int owner_label = 0;
    std::vector<identity_key> labels;

    std::size_t cardinality() const { return labels.size(); }

    void validate(int camera_count) const {
        if (labels.empty() || static_cast<int>(labels.size()) > camera_count)
            throw data_error("multi-label set cardinality outside 1..M");
        std::set<int> cams;
        bool owner_present = false;
        for (const auto& [cam, label] : labels) {
            if (!cams.insert(cam).second) throw data_error("multi-label set holds two labels for one camera");
            if (cam == owner_camera && label == owner_label) owner_present = true;
        }
        if (!owner_present) throw data_error("multi-label set does not contain its owner label");
    }
};

using multilabel_map = std::map<identity_key, multi_label_set>;

/// Owner-only multi-label sets for every identity of the dataset; what the
/// non-associating training modes use.
inline multilabel_map singleton_multilabels(const ics_dataset& ds) {
    multilabel_map out;
    for (int p = 1; p <= ds.cameras; ++p) {
        for (int k = 1; k <= ds.label_space(p); ++k) {
            multi_label_set y;
            y.owner_camera = p;
            y.owner_label = k;
            y.labels = {{p, k}};
            out[{p, k}] = std::move(y);
        }
    }
    return out;
}

/// A training mini-batch with its per-camera composition.
struct mini_batch {
    std::vector<sample> samples;
    std::map<int, int> per_camera_counts; // B^p for each camera present

    static mini_batch from_samples(std::vector<sample> samples) {
        mini_batch b;
        b.samples = std::move(samples);
        for (const auto& s : b.samples) b.per_camera_counts[s.camera] += 1;
        return b;
    }

    int total() const { return static_cast<int>(samples.size()); }
    int cameras_present() const { return static_cast<int>(per_camera_counts.size()); }
};

namespace detail {

inline const multi_label_set& lookup_multilabel(const multilabel_map& multilabels, const sample& s) {
    auto it = multilabels.find({s.camera, s.label});
    if (it == multilabels.end())
        throw data_error("no multi-label entry for camera " + std::to_string(s.camera) + " identity " +
                         std::to_string(s.label));
    return it->second;
}

} // namespace detail

/// Per-camera multi-task objective: cameras present in the batch are
/// averaged with equal weight, samples are averaged within each camera.
/// Cameras absent from the batch do not enter the outer average.
inline double loss_mt(const model_params& params, const mini_batch& batch) {
    if (batch.samples.empty()) throw data_error("loss_mt: empty batch");
    std::map<int, double> per_camera_sum;
    for (const auto& s : batch.samples) {
        std::vector<double> probs = head_probs(params, s.camera, encode(params, s.x));
        per_camera_sum[s.camera] += safe_neg_log(probs[static_cast<std::size_t>(s.label - 1)]);
    }
    double acc = 0.0;
    for (const auto& [camera, sum] : per_camera_sum) acc += sum / batch.per_camera_counts.at(camera);
    return acc / static_cast<double>(batch.cameras_present());
}

/// Cross-camera multi-label objective: per sample, the mean cross-entropy
/// over every (camera, identity) label in its multi-label set; then the
/// plain mean over the batch.
inline double loss_ml(const model_params& params, const mini_batch& batch, const multilabel_map& multilabels) {
    if (batch.samples.empty()) throw data_error("loss_ml: empty batch");
    double acc = 0.0;
    for (const auto& s : batch.samples) {
        const multi_label_set& y = detail::lookup_multilabel(multilabels, s);
        std::vector<double> f = encode(params, s.x);
        double sample_sum = 0.0;
        for (const auto& [cam, label] : y.labels) {
            std::vector<double> probs = head_probs(params, cam, f);
            sample_sum += safe_neg_log(probs[static_cast<std::size_t>(label - 1)]);
        }
        acc += sample_sum / static_cast<double>(y.cardinality());
    }
    return acc / static_cast<double>(batch.total());
}

inline void validate_loss_weight(double lambda) {
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw config_error("loss weight lambda must be in [0, 1]");
}

/// Combined objective: loss_mt + lambda * loss_ml.
inline double loss_total(const model_params& params, const mini_batch& batch, const multilabel_map& multilabels,
                         double lambda) {
    validate_loss_weight(lambda);
    return loss_mt(params, batch) + lambda * loss_ml(params, batch, multilabels);
}

struct batch_result {
    double loss = 0.0; // loss_mt + lambda * loss_ml
    double loss_mt = 0.0;
    double loss_ml = 0.0;
    gradients grads;
};

/// Combined loss and its exact analytic gradient in one pass.
///
/// Every loss term is a softmax cross-entropy through some head, so the
/// logit gradient of each term is weight * (softmax - onehot); head terms
/// are accumulated per sample, pushed through the head into feature space,
/// and backpropagated through the shared encoder.
inline batch_result forward_backward(const model_params& params, const mini_batch& batch,
                                     const multilabel_map& multilabels, double lambda) {
    validate_loss_weight(lambda);
    if (batch.samples.empty()) throw data_error("forward_backward: empty batch");
    batch_result result;
    result.grads = zeros_like(params);
    const double cameras_present = static_cast<double>(batch.cameras_present());
    const double batch_total = static_cast<double>(batch.total());

    forward_cache cache;
    for (const auto& s : batch.samples) {
        const multi_label_set& y = detail::lookup_multilabel(multilabels, s);
        std::vector<double> f = encode_cached(params, s.x, &cache);

        // (class, value weight into loss_ml or loss_mt, gradient weight)
        struct term {
            int label;
            double value_weight;
            bool is_mt;
            double grad_weight;
        };
        std::map<int, std::vector<term>> head_terms;
        const double w_mt = 1.0 / (cameras_present * batch.per_camera_counts.at(s.camera));
        head_terms[s.camera].push_back({s.label, w_mt, true, w_mt});
        const double w_ml = 1.0 / (batch_total * static_cast<double>(y.cardinality()));
        for (const auto& [cam, label] : y.labels) head_terms[cam].push_back({label, w_ml, false, lambda * w_ml});

        std::vector<double> dfeature(f.size(), 0.0);
        for (const auto& [cam, terms] : head_terms) {
            const matrix& head = params.heads[static_cast<std::size_t>(cam - 1)];
            std::vector<double> probs = softmax(matvec(head, f));
            double total_grad_weight = 0.0;
            for (const auto& t : terms) {
                double nll = safe_neg_log(probs[static_cast<std::size_t>(t.label - 1)]);
                (t.is_mt ? result.loss_mt : result.loss_ml) += t.value_weight * nll;
                total_grad_weight += t.grad_weight;
            }
            if (total_grad_weight == 0.0) continue;
            std::vector<double> dlogits(probs.size());
            for (std::size_t j = 0; j < probs.size(); ++j) dlogits[j] = total_grad_weight * probs[j];
            for (const auto& t : terms) dlogits[static_cast<std::size_t>(t.label - 1)] -= t.grad_weight;
            add_outer(result.grads.heads[static_cast<std::size_t>(cam - 1)], dlogits, f);
            std::vector<double> df = matvec_transposed(head, dlogits);
            for (std::size_t j = 0; j < dfeature.size(); ++j) dfeature[j] += df[j];
        }
        encoder_backward(params, cache, dfeature, result.grads);
    }
    result.loss = result.loss_mt + lambda * result.loss_ml;
    return result;
}

} // namespace mate
