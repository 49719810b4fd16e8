#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mate/errors.hpp"
#include "mate/matrix.hpp"
#include "mate/rng.hpp"

namespace mate {

/// One observation. Cameras and intra-camera identity labels are 1-based
/// throughout the library. `label == 0` marks a test-split record whose
/// identity never appears in its camera's training data and therefore has
/// no intra-camera label; training records must always carry a real label.
/// `global_id` is hidden ground truth: synthetic bookkeeping and evaluation
/// read it, training-path code never does.
struct sample {
    std::int64_t id = 0;
    std::vector<double> x;
    int camera = 0;
    int label = 0;
    std::optional<std::int64_t> global_id;

    bool operator==(const sample& other) const = default;
};

/// Per-camera independently labelled training collection plus held-out
/// query/gallery splits. Equal integer labels in different cameras carry
/// no identity semantics.
struct ics_dataset {
    int cameras = 0;                        // M
    std::vector<int> label_space_sizes;     // N_p at index p-1
    std::vector<std::vector<sample>> train; // camera p at index p-1
    std::vector<sample> query;
    std::vector<sample> gallery;

    bool operator==(const ics_dataset& other) const = default;

    int label_space(int camera) const {
        if (camera < 1 || camera > cameras)
            throw data_error("camera index " + std::to_string(camera) + " out of range 1.." + std::to_string(cameras));
        return label_space_sizes[static_cast<std::size_t>(camera - 1)];
    }

    const std::vector<sample>& camera_train(int camera) const {
        if (camera < 1 || camera > cameras)
            throw data_error("camera index " + std::to_string(camera) + " out of range 1.." + std::to_string(cameras));
        return train[static_cast<std::size_t>(camera - 1)];
    }

    std::size_t total_train() const {
        std::size_t n = 0;
        for (const auto& c : train) n += c.size();
        return n;
    }

    /// Structural validation of every dataset invariant. Called by the
    /// loader and before saving; cheap enough to call defensively elsewhere.
    void validate() const {
        if (cameras < 1) throw data_error("dataset must have at least one camera");
        if (static_cast<int>(label_space_sizes.size()) != cameras)
            throw data_error("label_space_sizes length does not match camera count");
        if (static_cast<int>(train.size()) != cameras)
            throw data_error("per-camera training collections do not match camera count");
        std::set<std::int64_t> seen_ids;
        std::size_t dim = 0;
        bool dim_known = false;
        auto check_vec = [&](const sample& s) {
            if (!all_finite(s.x)) throw data_error("sample " + std::to_string(s.id) + ": non-finite feature value");
            if (!dim_known) {
                dim = s.x.size();
                dim_known = true;
            } else if (s.x.size() != dim) {
                throw data_error("sample " + std::to_string(s.id) + ": inconsistent feature dimension");
            }
            if (!seen_ids.insert(s.id).second)
                throw data_error("duplicate sample id " + std::to_string(s.id));
        };
        for (int p = 1; p <= cameras; ++p) {
            const auto& coll = camera_train(p);
            int n_p = label_space(p);
            if (n_p < 2) throw data_error("camera " + std::to_string(p) + ": fewer than 2 identities");
            std::vector<bool> label_seen(static_cast<std::size_t>(n_p), false);
            for (const auto& s : coll) {
                check_vec(s);
                if (s.camera != p)
                    throw data_error("sample " + std::to_string(s.id) + ": stored under camera " + std::to_string(p) +
                                     " but tagged camera " + std::to_string(s.camera));
                if (s.label < 1 || s.label > n_p)
                    throw data_error("sample " + std::to_string(s.id) + ": label " + std::to_string(s.label) +
                                     " outside 1.." + std::to_string(n_p));
                label_seen[static_cast<std::size_t>(s.label - 1)] = true;
            }
            for (int k = 1; k <= n_p; ++k)
                if (!label_seen[static_cast<std::size_t>(k - 1)])
                    throw data_error("camera " + std::to_string(p) + ": identity " + std::to_string(k) + " has no samples");
        }
        for (const auto* split : {&query, &gallery}) {
            for (const auto& s : *split) {
                check_vec(s);
                if (s.camera < 1 || s.camera > cameras)
                    throw data_error("sample " + std::to_string(s.id) + ": camera index out of range");
                if (!s.global_id)
                    throw data_error("test sample " + std::to_string(s.id) + ": missing global_id");
                if (s.label < 0 || s.label > label_space(s.camera))
                    throw data_error("sample " + std::to_string(s.id) + ": label outside camera label space");
            }
        }
    }

    /// True when every training sample carries a global_id (required for
    /// association metrics and for ics_transform input).
    bool train_has_global_ids() const {
        for (const auto& coll : train)
            for (const auto& s : coll)
                if (!s.global_id) return false;
        return true;
    }
};

/// Controls for the synthetic multi-camera generator. Each global identity
/// owns a latent vector; each camera observes it through a camera-specific
/// affine transform plus isotropic noise.
struct synth_config {
    int cameras = 4;                     // M
    int identities = 50;                 // G
    double reappear_fraction = 1.0;      // per-camera identity visibility
    int samples_per_identity = 4;        // training images per (camera, identity)
    int latent_dim = 8;
    int input_dim = 16;
    double camera_transform_scale = 0.5;
    double camera_transform_spread = 0.0; // extra per-camera difficulty ramp
    double noise_sigma = 0.1;
    std::uint64_t seed = 1;
    int query_per_identity = 1;          // test split size per (camera, identity)
    int gallery_per_identity = 2;

    void validate() const {
        if (cameras < 2) throw config_error("synth: need at least 2 cameras");
        if (identities < 2) throw config_error("synth: need at least 2 identities");
        if (reappear_fraction < 0.0 || reappear_fraction > 1.0)
            throw config_error("synth: reappear_fraction outside [0, 1]");
        if (samples_per_identity < 1) throw config_error("synth: samples_per_identity must be >= 1");
        if (latent_dim < 1 || input_dim < 1) throw config_error("synth: dimensions must be >= 1");
        if (camera_transform_scale < 0.0) throw config_error("synth: camera_transform_scale must be >= 0");
        if (camera_transform_spread < 0.0) throw config_error("synth: camera_transform_spread must be >= 0");
        if (noise_sigma < 0.0) throw config_error("synth: noise_sigma must be >= 0");
        if (query_per_identity < 0 || gallery_per_identity < 0)
            throw config_error("synth: test split sizes must be >= 0");
    }
};

/// Exact leading-term comparison counts for annotating N identities over
/// M cameras: intra-camera labelling, and the two inter-camera extremes
/// (every person reappears everywhere vs. nobody reappears).
struct cost_estimate {
    std::int64_t intra_total = 0;
    std::int64_t inter_low = 0;
    std::int64_t inter_high = 0;
};

inline cost_estimate annotation_cost(std::int64_t identities, std::int64_t cameras) {
    if (identities < 1 || cameras < 1)
        throw config_error("annotation_cost: identities and cameras must be >= 1");
    cost_estimate est;
    est.intra_total = cameras * identities * identities;
    est.inter_low = identities * identities * cameras;
    est.inter_high = cameras * cameras * identities * identities;
    return est;
}

namespace detail {

/// Which global identities camera p observes: an independent Bernoulli
/// draw per identity at rate reappear_fraction, then the lowest-indexed
/// absent identities are added until the camera holds at least 2.
/// This is the documented subset-sampling rule; the test suite re-derives
/// it independently from the stream layout.
inline std::vector<int> camera_member_identities(const synth_config& cfg, int camera) {
    rng stream = rng(cfg.seed).substream(stream::camera_members, static_cast<std::uint64_t>(camera));
    std::vector<int> members;
    for (int g = 1; g <= cfg.identities; ++g)
        if (stream.uniform() < cfg.reappear_fraction) members.push_back(g);
    for (int g = 1; g <= cfg.identities && static_cast<int>(members.size()) < 2; ++g)
        if (!std::binary_search(members.begin(), members.end(), g))
            members.insert(std::lower_bound(members.begin(), members.end(), g), g);
    return members;
}

inline std::vector<double> gaussian_vector(rng& stream, int n, double sigma, double mean = 0.0) {
    std::vector<double> v(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) v[static_cast<std::size_t>(i)] = stream.gaussian(mean, sigma);
    return v;
}

inline matrix gaussian_matrix(rng& stream, int rows, int cols, double sigma) {
    matrix m(rows, cols);
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) m(r, c) = stream.gaussian(0.0, sigma);
    return m;
}

} // namespace detail

/// Synthetic multi-camera generator. Deterministic in cfg.seed; every
/// randomized step draws from its own substream so per-camera content is
/// order-independent. Generation walk, in stream terms:
///   latent(g):            identity latent vector, latent_dim gaussians
///   camera_transform(0):  shared base projection, scaled 1/sqrt(latent_dim)
///   camera_transform(p):  camera perturbation + bias, scaled by
///                         camera_transform_scale
///   camera_members(p):    Bernoulli visibility per identity (see above)
///   camera_labels(p):     permutation of 1..N_p over identities ascending
///   observation(p):       training noise, identities ascending, samples in order
///   test_observation(p):  query then gallery noise in the same order
/// Sample ids are assigned sequentially: all training samples in (camera,
/// identity, sample) order, then the test split.
inline ics_dataset generate_synthetic(const synth_config& cfg) {
    cfg.validate();
    rng root(cfg.seed);

    std::vector<std::vector<double>> latents(static_cast<std::size_t>(cfg.identities));
    for (int g = 1; g <= cfg.identities; ++g) {
        rng stream = root.substream(stream::latent, static_cast<std::uint64_t>(g));
        latents[static_cast<std::size_t>(g - 1)] = detail::gaussian_vector(stream, cfg.latent_dim, 1.0);
    }

    rng base_stream = root.substream(stream::camera_transform, 0);
    matrix base = detail::gaussian_matrix(base_stream, cfg.input_dim, cfg.latent_dim,
                                          1.0 / std::sqrt(static_cast<double>(cfg.latent_dim)));

    struct camera_model {
        matrix transform;
        std::vector<double> bias;
        std::vector<int> members;           // observed global ids, ascending
        std::map<int, int> label_of_global; // global id -> intra-camera label
    };
    std::vector<camera_model> cams(static_cast<std::size_t>(cfg.cameras));
    ics_dataset ds;
    ds.cameras = cfg.cameras;
    ds.label_space_sizes.resize(static_cast<std::size_t>(cfg.cameras));
    ds.train.resize(static_cast<std::size_t>(cfg.cameras));

    for (int p = 1; p <= cfg.cameras; ++p) {
        auto& cam = cams[static_cast<std::size_t>(p - 1)];
        rng tstream = root.substream(stream::camera_transform, static_cast<std::uint64_t>(p));
        // Cameras are progressively harder along the index when a spread is
        // configured: camera 1 keeps the base scale, camera M gets
        // scale * (1 + spread).
        double ramp = cfg.cameras > 1 ? static_cast<double>(p - 1) / static_cast<double>(cfg.cameras - 1) : 0.0;
        double scale_p = cfg.camera_transform_scale * (1.0 + cfg.camera_transform_spread * ramp);
        matrix perturb = detail::gaussian_matrix(tstream, cfg.input_dim, cfg.latent_dim,
                                                 scale_p / std::sqrt(static_cast<double>(cfg.latent_dim)));
        cam.transform = base;
        for (std::size_t i = 0; i < cam.transform.data.size(); ++i) cam.transform.data[i] += perturb.data[i];
        cam.bias = detail::gaussian_vector(tstream, cfg.input_dim, scale_p);

        cam.members = detail::camera_member_identities(cfg, p);
        int n_p = static_cast<int>(cam.members.size());
        ds.label_space_sizes[static_cast<std::size_t>(p - 1)] = n_p;
        if (n_p < 2)
            throw config_error("synth: camera " + std::to_string(p) + " would have fewer than 2 identities");

        rng lstream = root.substream(stream::camera_labels, static_cast<std::uint64_t>(p));
        std::vector<int> perm = lstream.permutation_1_based(n_p);
        for (int i = 0; i < n_p; ++i)
            cam.label_of_global[cam.members[static_cast<std::size_t>(i)]] = perm[static_cast<std::size_t>(i)];
    }

    std::int64_t next_id = 0;
    auto observe = [&](const camera_model& cam, int global, rng& noise) {
        const auto& z = latents[static_cast<std::size_t>(global - 1)];
        std::vector<double> x = matvec(cam.transform, z);
        for (int i = 0; i < cfg.input_dim; ++i)
            x[static_cast<std::size_t>(i)] += cam.bias[static_cast<std::size_t>(i)] + noise.gaussian(0.0, cfg.noise_sigma);
        return x;
    };

    for (int p = 1; p <= cfg.cameras; ++p) {
        auto& cam = cams[static_cast<std::size_t>(p - 1)];
        rng noise = root.substream(stream::observation, static_cast<std::uint64_t>(p));
        for (int global : cam.members) {
            for (int s = 0; s < cfg.samples_per_identity; ++s) {
                sample obs;
                obs.id = next_id++;
                obs.camera = p;
                obs.label = cam.label_of_global.at(global);
                obs.global_id = global;
                obs.x = observe(cam, global, noise);
                ds.train[static_cast<std::size_t>(p - 1)].push_back(std::move(obs));
            }
        }
    }
    for (int p = 1; p <= cfg.cameras; ++p) {
        auto& cam = cams[static_cast<std::size_t>(p - 1)];
        rng noise = root.substream(stream::test_observation, static_cast<std::uint64_t>(p));
        for (int global : cam.members) {
            for (int s = 0; s < cfg.query_per_identity + cfg.gallery_per_identity; ++s) {
                sample obs;
                obs.id = next_id++;
                obs.camera = p;
                obs.label = cam.label_of_global.at(global);
                obs.global_id = global;
                obs.x = observe(cam, global, noise);
                (s < cfg.query_per_identity ? ds.query : ds.gallery).push_back(std::move(obs));
            }
        }
    }
    ds.validate();
    return ds;
}

/// Independent per-camera relabelling: training labels of each camera are
/// replaced by a seeded permutation of 1..N_p over that camera's global
/// identities, so label equality across cameras becomes meaningless.
/// Test samples keep their global_id; their label is remapped when their
/// identity appears in the camera's training data and cleared to 0
/// otherwise. Requires global_id on every training sample.
inline ics_dataset ics_transform(const ics_dataset& fully_labelled, std::uint64_t seed) {
    if (!fully_labelled.train_has_global_ids())
        throw data_error("ics_transform: every training sample must carry a global_id");
    ics_dataset out = fully_labelled;
    rng root(seed);
    std::vector<std::map<std::int64_t, int>> label_of_global(static_cast<std::size_t>(out.cameras));
    for (int p = 1; p <= out.cameras; ++p) {
        auto& coll = out.train[static_cast<std::size_t>(p - 1)];
        std::set<std::int64_t> globals;
        for (const auto& s : coll) globals.insert(*s.global_id);
        int n_p = static_cast<int>(globals.size());
        if (n_p < 2) throw data_error("ics_transform: camera " + std::to_string(p) + " has fewer than 2 identities");
        rng stream = root.substream(stream::relabel, static_cast<std::uint64_t>(p));
        std::vector<int> perm = stream.permutation_1_based(n_p);
        auto& mapping = label_of_global[static_cast<std::size_t>(p - 1)];
        int rank = 0;
        for (std::int64_t g : globals) mapping[g] = perm[static_cast<std::size_t>(rank++)];
        for (auto& s : coll) s.label = mapping.at(*s.global_id);
        out.label_space_sizes[static_cast<std::size_t>(p - 1)] = n_p;
    }
    for (auto* split : {&out.query, &out.gallery}) {
        for (auto& s : *split) {
            if (!s.global_id) throw data_error("ics_transform: test sample " + std::to_string(s.id) + " missing global_id");
            const auto& mapping = label_of_global[static_cast<std::size_t>(s.camera - 1)];
            auto it = mapping.find(*s.global_id);
            s.label = it == mapping.end() ? 0 : it->second;
        }
    }
    out.validate();
    return out;
}

// ---------------------------------------------------------------------------
// JSON-lines dataset file format.
//
// The file is a concatenation of three sections (train, query, gallery),
// each opened by a header line and followed by one record per sample:
//   {"M":2,"label_space_sizes":[3,3],"split":"train"}
//   {"id":0,"camera":1,"label":2,"global_id":1,"x":[0.25,-1.5]}
// Headers must agree on M and label_space_sizes. Doubles are serialized at
// round-trip precision, so save/load is bit-exact.
// ---------------------------------------------------------------------------

namespace detail {

inline void write_sample_line(std::ostream& os, const sample& s) {
    nlohmann::json j;
    j["id"] = s.id;
    j["camera"] = s.camera;
    j["label"] = s.label;
    if (s.global_id)
        j["global_id"] = *s.global_id;
    else
        j["global_id"] = nullptr;
    j["x"] = s.x;
    os << j.dump() << '\n';
}

inline sample parse_sample_line(const nlohmann::json& j, std::size_t line_no) {
    auto fail = [line_no](const std::string& msg) -> sample {
        throw data_error("line " + std::to_string(line_no) + ": " + msg);
    };
    if (!j.contains("id") || !j.contains("camera") || !j.contains("label") || !j.contains("x"))
        return fail("sample record missing a required field");
    sample s;
    s.id = j.at("id").get<std::int64_t>();
    s.camera = j.at("camera").get<int>();
    s.label = j.at("label").get<int>();
    if (j.contains("global_id") && !j.at("global_id").is_null())
        s.global_id = j.at("global_id").get<std::int64_t>();
    if (!j.at("x").is_array()) return fail("field 'x' must be an array");
    s.x = j.at("x").get<std::vector<double>>();
    if (s.camera < 1) return fail("camera indices are 1-based, got " + std::to_string(s.camera));
    if (s.label < 0) return fail("negative identity label");
    if (!all_finite(s.x)) return fail("non-finite feature value");
    return s;
}

} // namespace detail

inline void save_dataset(const ics_dataset& ds, std::ostream& os) {
    ds.validate();
    auto header = [&](const char* split) {
        nlohmann::json j;
        j["M"] = ds.cameras;
        j["label_space_sizes"] = ds.label_space_sizes;
        j["split"] = split;
        os << j.dump() << '\n';
    };
    header("train");
    for (const auto& coll : ds.train)
        for (const auto& s : coll) detail::write_sample_line(os, s);
    header("query");
    for (const auto& s : ds.query) detail::write_sample_line(os, s);
    header("gallery");
    for (const auto& s : ds.gallery) detail::write_sample_line(os, s);
}

inline void save_dataset(const ics_dataset& ds, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw data_error("cannot open for writing: " + path);
    save_dataset(ds, os);
    if (!os) throw data_error("write failure: " + path);
}

inline ics_dataset load_dataset(std::istream& is) {
    ics_dataset ds;
    std::string line;
    std::size_t line_no = 0;
    std::string current_split;
    bool header_seen = false;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw data_error("line " + std::to_string(line_no) + ": malformed JSON record (" + e.what() + ")");
        }
        if (j.contains("split")) {
            int m = j.at("M").get<int>();
            auto sizes = j.at("label_space_sizes").get<std::vector<int>>();
            if (!header_seen) {
                ds.cameras = m;
                ds.label_space_sizes = sizes;
                ds.train.resize(static_cast<std::size_t>(m));
                header_seen = true;
            } else if (m != ds.cameras || sizes != ds.label_space_sizes) {
                throw data_error("line " + std::to_string(line_no) + ": header disagrees on M or label_space_sizes");
            }
            current_split = j.at("split").get<std::string>();
            if (current_split != "train" && current_split != "query" && current_split != "gallery")
                throw data_error("line " + std::to_string(line_no) + ": unknown split '" + current_split + "'");
            continue;
        }
        if (!header_seen)
            throw data_error("line " + std::to_string(line_no) + ": sample record before any header line");
        sample s = detail::parse_sample_line(j, line_no);
        if (s.camera > ds.cameras)
            throw data_error("line " + std::to_string(line_no) + ": camera " + std::to_string(s.camera) +
                             " exceeds declared camera count " + std::to_string(ds.cameras));
        if (current_split == "train") {
            if (s.label < 1 || s.label > ds.label_space_sizes[static_cast<std::size_t>(s.camera - 1)])
                throw data_error("line " + std::to_string(line_no) + ": label " + std::to_string(s.label) +
                                 " inconsistent with declared label_space_sizes");
            ds.train[static_cast<std::size_t>(s.camera - 1)].push_back(std::move(s));
        } else if (current_split == "query") {
            ds.query.push_back(std::move(s));
        } else {
            ds.gallery.push_back(std::move(s));
        }
    }
    if (!header_seen) throw data_error("dataset file contains no header line");
    ds.validate();
    return ds;
}

inline ics_dataset load_dataset(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw data_error("cannot open for reading: " + path);
    return load_dataset(is);
}

} // namespace mate
