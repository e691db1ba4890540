#pragma once

// Run configuration documents and dataset assembly from files on disk.
// Relative paths resolve against the directory holding the config file.

#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "comet/cemb.hpp"
#include "comet/errors.hpp"
#include "comet/fusion.hpp"
#include "comet/pal.hpp"
#include "comet/predictor.hpp"
#include "comet/remote_predictor.hpp"
#include "comet/tabular.hpp"
#include "comet/types.hpp"

#include <json.hpp>

namespace comet {

struct TabularSource {
    std::filesystem::path path;
    TabularSchema schema{"sample_id", {}, {}};
};

struct LabelSource {
    std::filesystem::path path;
    std::string id_column = "sample_id";
    std::string label_column = "label";
};

struct DataConfig {
    std::map<std::string, std::filesystem::path> modalities;
    std::optional<TabularSource> tabular;
    std::optional<LabelSource> labels;
    std::vector<std::string> class_names;
    std::optional<std::filesystem::path> tree;
};

struct ModalityEntry {
    ModalitySpec spec;
    std::optional<std::filesystem::path> pooler;  // pre-fitted PAL pooler JSON
};

struct FusionConfig {
    std::vector<ModalityEntry> modalities;
    bool tabular = true;
};

struct PalSection {
    std::string modality;  // empty: the only token modality
    PalFitConfig fit;
};

struct PredictorSection {
    std::string kind = "reference";
    ReferencePredictorConfig reference;
    RemotePredictorConfig remote;
};

struct HierarchySection {
    bool enabled = false;
    std::size_t budget = 200000;
    bool shared_pca = false;
};

struct EvalSection {
    double split_fraction = 0.8;  // share of samples in the support (train) part
    bool stratified = true;
    std::uint64_t seed = 0;
};

struct DiagnosticsSection {
    std::string modality;  // empty: the first fusion modality
    std::vector<std::size_t> dims{16, 32, 64, 128, 256};
};

struct RunConfig {
    DataConfig data;
    FusionConfig fusion;
    PalSection pal;
    PredictorSection predictor;
    HierarchySection hierarchy;
    EvalSection eval;
    DiagnosticsSection diagnostics;
    std::filesystem::path output_dir = "out";
};

namespace config_detail {

using nlohmann::json;

inline void reject_unknown(const json& j, const std::string& where, std::initializer_list<const char*> allowed) {
    if (!j.is_object()) throw SchemaError(where + " must be an object");
    const std::set<std::string> ok(allowed.begin(), allowed.end());
    for (const auto& [key, _] : j.items())
        if (!ok.count(key)) throw SchemaError("unknown key '" + key + "' in " + where);
}

template <typename T>
T get(const json& j, const char* key, const std::string& where) {
    try {
        return j.at(key).get<T>();
    } catch (const json::exception&) {
        throw SchemaError(where + "." + key + " has the wrong type");
    }
}

template <typename T>
void read_opt(const json& j, const char* key, const std::string& where, T& into) {
    if (j.contains(key)) into = get<T>(j, key, where);
}

inline std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
    const std::filesystem::path path(p);
    return path.is_absolute() ? path : base / path;
}

inline std::uint64_t get_seed(const json& j, const char* key, const std::string& where) {
    if (!j.at(key).is_number_unsigned() && !(j.at(key).is_number_integer() && j.at(key).get<long long>() >= 0))
        throw SchemaError(where + "." + key + " must be a non-negative integer");
    return j.at(key).get<std::uint64_t>();
}

inline void parse_data(const json& j, const std::filesystem::path& base, DataConfig& d) {
    reject_unknown(j, "data", {"modalities", "tabular", "labels", "class_names", "tree"});
    if (j.contains("modalities")) {
        const auto& m = j.at("modalities");
        if (!m.is_object()) throw SchemaError("data.modalities must map names to CEMB paths");
        for (const auto& [name, path] : m.items()) {
            if (!path.is_string()) throw SchemaError("data.modalities." + name + " must be a path string");
            d.modalities[name] = resolve(base, path.get<std::string>());
        }
    }
    if (j.contains("tabular")) {
        const auto& t = j.at("tabular");
        reject_unknown(t, "data.tabular", {"path", "id_column", "numeric", "categorical"});
        TabularSource src;
        src.path = resolve(base, get<std::string>(t, "path", "data.tabular"));
        read_opt(t, "id_column", "data.tabular", src.schema.id_column);
        read_opt(t, "numeric", "data.tabular", src.schema.numeric);
        read_opt(t, "categorical", "data.tabular", src.schema.categorical);
        d.tabular = std::move(src);
    }
    if (j.contains("labels")) {
        const auto& l = j.at("labels");
        reject_unknown(l, "data.labels", {"path", "id_column", "label_column"});
        LabelSource src;
        src.path = resolve(base, get<std::string>(l, "path", "data.labels"));
        read_opt(l, "id_column", "data.labels", src.id_column);
        read_opt(l, "label_column", "data.labels", src.label_column);
        d.labels = std::move(src);
    }
    read_opt(j, "class_names", "data", d.class_names);
    if (j.contains("tree")) d.tree = resolve(base, get<std::string>(j, "tree", "data"));
}

inline void parse_fusion(const json& j, const std::filesystem::path& base, FusionConfig& f) {
    reject_unknown(j, "fusion", {"modalities", "tabular"});
    read_opt(j, "tabular", "fusion", f.tabular);
    if (!j.contains("modalities")) return;
    if (!j.at("modalities").is_array()) throw SchemaError("fusion.modalities must be an array");
    for (const auto& m : j.at("modalities")) {
        const std::string where = "fusion.modalities[]";
        reject_unknown(m, where, {"name", "pooling", "cls_index", "pca_dim", "pooler"});
        ModalityEntry e;
        e.spec.name = get<std::string>(m, "name", where);
        if (m.contains("pooling")) {
            try {
                e.spec.pooling = pooling_from_string(get<std::string>(m, "pooling", where));
            } catch (const SpecError& err) {
                throw SchemaError(err.what());
            }
        }
        read_opt(m, "cls_index", where, e.spec.cls_index);
        read_opt(m, "pca_dim", where, e.spec.pca_dim);
        if (m.contains("pooler")) e.pooler = resolve(base, get<std::string>(m, "pooler", where));
        f.modalities.push_back(std::move(e));
    }
}

inline void parse_pal(const json& j, PalSection& p) {
    reject_unknown(j, "pal", {"modality", "iterations", "q_max", "lambda", "tau", "pal_pca_dim", "scorer",
                              "group_schedule", "length_weighting", "validation_fraction", "ridge_in_pca_space",
                              "center_scores", "predict_chunk", "seed"});
    auto& c = p.fit;
    read_opt(j, "modality", "pal", p.modality);
    read_opt(j, "iterations", "pal", c.iterations);
    read_opt(j, "q_max", "pal", c.q_max);
    read_opt(j, "lambda", "pal", c.lambda);
    if (j.contains("tau") && !j.at("tau").is_null()) c.tau = get<double>(j, "tau", "pal");
    read_opt(j, "pal_pca_dim", "pal", c.pal_pca_dim);
    if (j.contains("scorer")) {
        try {
            c.scorer = scorer_from_string(get<std::string>(j, "scorer", "pal"));
        } catch (const CometError& err) {
            throw SchemaError(err.what());
        }
    }
    read_opt(j, "group_schedule", "pal", c.group_schedule);
    if (j.contains("length_weighting") && !j.at("length_weighting").is_null())
        c.length_weighting = get<bool>(j, "length_weighting", "pal");
    read_opt(j, "validation_fraction", "pal", c.validation_fraction);
    read_opt(j, "ridge_in_pca_space", "pal", c.ridge_in_pca_space);
    read_opt(j, "center_scores", "pal", c.center_scores);
    read_opt(j, "predict_chunk", "pal", c.predict_chunk);
    if (j.contains("seed")) c.seed = get_seed(j, "seed", "pal");
    c.validate();
}

inline void parse_predictor(const json& j, PredictorSection& p) {
    reject_unknown(j, "predictor", {"kind", "reference", "remote"});
    read_opt(j, "kind", "predictor", p.kind);
    if (p.kind != "reference" && p.kind != "remote")
        throw SchemaError("predictor.kind must be 'reference' or 'remote', got '" + p.kind + "'");
    if (j.contains("reference")) {
        const auto& r = j.at("reference");
        reject_unknown(r, "predictor.reference", {"bandwidth_scale", "smoothing_alpha", "standardize", "seed", "bandwidth_sample"});
        read_opt(r, "bandwidth_scale", "predictor.reference", p.reference.bandwidth_scale);
        read_opt(r, "smoothing_alpha", "predictor.reference", p.reference.smoothing_alpha);
        read_opt(r, "standardize", "predictor.reference", p.reference.standardize);
        if (r.contains("seed")) p.reference.seed = get_seed(r, "seed", "predictor.reference");
        read_opt(r, "bandwidth_sample", "predictor.reference", p.reference.bandwidth_sample);
    }
    if (!(p.reference.bandwidth_scale > 0.0)) throw SchemaError("predictor.reference.bandwidth_scale must be > 0");
    if (!(p.reference.smoothing_alpha >= 0.0)) throw SchemaError("predictor.reference.smoothing_alpha must be >= 0");
    if (j.contains("remote")) {
        const auto& r = j.at("remote");
        reject_unknown(r, "predictor.remote", {"endpoint", "timeout_seconds", "max_batch", "retries", "max_in_flight", "bearer_token"});
        read_opt(r, "endpoint", "predictor.remote", p.remote.endpoint);
        read_opt(r, "timeout_seconds", "predictor.remote", p.remote.timeout_seconds);
        read_opt(r, "max_batch", "predictor.remote", p.remote.max_batch);
        read_opt(r, "retries", "predictor.remote", p.remote.retries);
        read_opt(r, "max_in_flight", "predictor.remote", p.remote.max_in_flight);
        if (r.contains("bearer_token")) p.remote.bearer_token = get<std::string>(r, "bearer_token", "predictor.remote");
    }
    if (p.kind == "remote") p.remote.validate();
}

}  // namespace config_detail

inline RunConfig parse_run_config(const nlohmann::json& j, const std::filesystem::path& base_dir) {
    using namespace config_detail;
    reject_unknown(j, "config", {"data", "fusion", "pal", "predictor", "hierarchy", "eval", "diagnostics", "output_dir"});
    RunConfig c;
    if (j.contains("data")) parse_data(j.at("data"), base_dir, c.data);
    if (j.contains("fusion")) parse_fusion(j.at("fusion"), base_dir, c.fusion);
    if (j.contains("pal")) parse_pal(j.at("pal"), c.pal);
    if (j.contains("predictor")) parse_predictor(j.at("predictor"), c.predictor);
    if (j.contains("hierarchy")) {
        const auto& h = j.at("hierarchy");
        reject_unknown(h, "hierarchy", {"enabled", "budget", "shared_pca"});
        read_opt(h, "enabled", "hierarchy", c.hierarchy.enabled);
        read_opt(h, "budget", "hierarchy", c.hierarchy.budget);
        read_opt(h, "shared_pca", "hierarchy", c.hierarchy.shared_pca);
        if (c.hierarchy.budget < 1) throw SchemaError("hierarchy.budget must be >= 1");
    }
    if (j.contains("eval")) {
        const auto& e = j.at("eval");
        reject_unknown(e, "eval", {"split_fraction", "stratified", "seed"});
        read_opt(e, "split_fraction", "eval", c.eval.split_fraction);
        read_opt(e, "stratified", "eval", c.eval.stratified);
        if (e.contains("seed")) c.eval.seed = get_seed(e, "seed", "eval");
        if (!(c.eval.split_fraction > 0.0 && c.eval.split_fraction < 1.0))
            throw SchemaError("eval.split_fraction must lie in (0, 1)");
    }
    if (j.contains("diagnostics")) {
        const auto& d = j.at("diagnostics");
        reject_unknown(d, "diagnostics", {"modality", "dims"});
        read_opt(d, "modality", "diagnostics", c.diagnostics.modality);
        read_opt(d, "dims", "diagnostics", c.diagnostics.dims);
        if (c.diagnostics.dims.empty()) throw SchemaError("diagnostics.dims must not be empty");
        for (auto v : c.diagnostics.dims)
            if (v < 1) throw SchemaError("diagnostics.dims entries must be >= 1");
    }
    if (j.contains("output_dir")) c.output_dir = resolve(base_dir, get<std::string>(j, "output_dir", "config"));
    else c.output_dir = base_dir / c.output_dir;
    if (c.data.modalities.empty() && !c.data.tabular) throw SchemaError("data lists no modality and no tabular file");
    for (const auto& m : c.fusion.modalities)
        if (!c.data.modalities.count(m.spec.name))
            throw SchemaError("fusion modality '" + m.spec.name + "' is not listed under data.modalities");
    return c;
}

inline RunConfig read_run_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw SchemaError("cannot open config " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    const auto j = nlohmann::json::parse(ss.str(), nullptr, false);
    if (j.is_discarded()) throw SchemaError("config " + path.string() + " is not valid JSON");
    return parse_run_config(j, path.parent_path().empty() ? std::filesystem::path(".") : path.parent_path());
}

// Every input file named by the config must exist before any work starts.
inline void check_inputs_exist(const RunConfig& c, bool need_tree) {
    auto need = [](const std::filesystem::path& p, const std::string& what) {
        if (!std::filesystem::is_regular_file(p)) throw SchemaError(what + " not found: " + p.string());
    };
    for (const auto& [name, path] : c.data.modalities) need(path, "embedding file for modality '" + name + "'");
    if (c.data.tabular) need(c.data.tabular->path, "tabular file");
    if (c.data.labels) need(c.data.labels->path, "labels file");
    for (const auto& m : c.fusion.modalities)
        if (m.pooler) need(*m.pooler, "pooler file for modality '" + m.spec.name + "'");
    if (need_tree) {
        if (!c.data.tree) throw SchemaError("data.tree is required for this command");
        need(*c.data.tree, "label tree file");
    }
}

// A dataset whose tabular block is still raw text; encoding is fitted later on
// the support rows only.
struct LoadedData {
    LabeledDataset dataset;
    std::optional<RawTable> tabular_raw;  // rows aligned with dataset.sample_ids
    std::optional<TabularSchema> tabular_schema;
};

namespace config_detail {

inline std::map<std::string, std::size_t> index_ids(const std::vector<std::string>& ids, const std::string& what) {
    std::map<std::string, std::size_t> out;
    for (std::size_t i = 0; i < ids.size(); ++i)
        if (!out.emplace(ids[i], i).second) throw DataError(what + " repeats sample id '" + ids[i] + "'");
    return out;
}

inline std::vector<std::size_t> order_for(const std::vector<std::string>& want, const std::vector<std::string>& have,
                                          const std::string& what) {
    const auto index = index_ids(have, what);
    if (have.size() != want.size())
        throw DataError(what + " has " + std::to_string(have.size()) + " samples, expected " + std::to_string(want.size()));
    std::vector<std::size_t> rows;
    rows.reserve(want.size());
    for (const auto& id : want) {
        const auto it = index.find(id);
        if (it == index.end()) throw DataError(what + " has no sample '" + id + "'");
        rows.push_back(it->second);
    }
    return rows;
}

inline std::optional<Labels> labels_of(const Modality& m) {
    return std::visit([](const auto& x) { return x.labels; }, m);
}

}  // namespace config_detail

inline LoadedData load_data(const DataConfig& cfg) {
    using namespace config_detail;
    LoadedData out;
    auto& ds = out.dataset;
    std::optional<Labels> file_labels;
    for (const auto& [name, path] : cfg.modalities) {
        Modality block = std::visit([](auto&& x) -> Modality { return std::move(x); }, read_embeddings(path));
        if (ds.sample_ids.empty()) {
            ds.sample_ids = sample_ids_of(block);
            index_ids(ds.sample_ids, "modality '" + name + "'");
        } else if (sample_ids_of(block) != ds.sample_ids) {
            const auto rows = order_for(ds.sample_ids, sample_ids_of(block), "modality '" + name + "'");
            block = std::visit([&](const auto& x) -> Modality { return select_rows(x, rows); }, block);
        }
        if (auto l = labels_of(block)) {
            if (file_labels && *file_labels != *l)
                throw DataError("modality '" + name + "' carries labels that disagree with another file");
            file_labels = std::move(l);
        }
        ds.modalities.emplace(name, std::move(block));
    }
    if (cfg.tabular) {
        RawTable raw = read_csv_table(cfg.tabular->path);
        const auto& schema = cfg.tabular->schema;
        std::vector<std::string> ids;
        if (schema.id_column.empty()) {
            for (std::size_t r = 0; r < raw.rows.size(); ++r) ids.push_back(std::to_string(r));
        } else {
            const auto col = tabular_detail::column_index(raw, schema.id_column);
            for (const auto& row : raw.rows) ids.push_back(row[col]);
        }
        if (ds.sample_ids.empty()) {
            ds.sample_ids = ids;
            index_ids(ids, "tabular file");
        } else if (ids != ds.sample_ids) {
            const auto rows = order_for(ds.sample_ids, ids, "tabular file");
            RawTable reordered{raw.header, {}};
            for (auto r : rows) reordered.rows.push_back(raw.rows[r]);
            raw = std::move(reordered);
        }
        // Fail on unknown columns now rather than after the split.
        fit_tabular_encoding(raw, schema);
        out.tabular_raw = std::move(raw);
        out.tabular_schema = schema;
    }
    if (cfg.labels) {
        const RawTable t = read_csv_table(cfg.labels->path);
        const auto id_col = tabular_detail::column_index(t, cfg.labels->id_column);
        const auto label_col = tabular_detail::column_index(t, cfg.labels->label_column);
        std::vector<std::string> ids;
        for (const auto& row : t.rows) ids.push_back(row[id_col]);
        const auto rows = order_for(ds.sample_ids, ids, "labels file");
        Labels y;
        for (auto r : rows) {
            const std::string& cell = t.rows[r][label_col];
            const auto named = std::find(cfg.class_names.begin(), cfg.class_names.end(), cell);
            if (named != cfg.class_names.end()) {
                y.push_back(static_cast<int>(named - cfg.class_names.begin()));
                continue;
            }
            std::size_t used = 0;
            int v = -1;
            try {
                v = std::stoi(cell, &used);
            } catch (const std::exception&) {
                used = 0;
            }
            if (used != cell.size() || cell.empty() || v < 0)
                throw DataError("label '" + cell + "' is neither a class name nor a class index");
            y.push_back(v);
        }
        file_labels = std::move(y);
    }
    if (!file_labels) throw DataError("no labels: add data.labels or use embedding files that carry labels");
    ds.labels = std::move(*file_labels);
    const int c = count_classes(ds.labels);
    ds.class_names = cfg.class_names.empty() ? default_class_names(c) : cfg.class_names;
    if (c > ds.num_classes()) throw DataError("labels reference more classes than data.class_names lists");
    if (ds.num_classes() < 2) throw DataError("at least 2 classes are required");
    for (auto& [name, block] : ds.modalities)
        std::visit([&](auto& x) { x.labels = ds.labels; x.num_classes = ds.num_classes(); }, block);
    return out;
}

// Fit the tabular encoding on `fit_rows` and attach the encoded block.
inline std::optional<TabularEncoding> encode_tabular_block(LoadedData& data, const std::vector<std::size_t>& fit_rows) {
    if (!data.tabular_raw) return std::nullopt;
    const auto enc = fit_tabular_encoding(*data.tabular_raw, *data.tabular_schema, fit_rows);
    FeatureMatrix tab = encode_tabular(*data.tabular_raw, enc);
    tab.sample_ids = data.dataset.sample_ids;
    tab.labels = data.dataset.labels;
    tab.num_classes = data.dataset.num_classes();
    data.dataset.tabular = std::move(tab);
    return enc;
}

inline std::unique_ptr<InContextClassifier> make_predictor(const PredictorSection& p) {
    if (p.kind == "remote") return std::make_unique<RemotePredictor>(p.remote);
    return std::make_unique<ReferencePredictor>(p.reference);
}

inline FusionSpec fusion_spec_of(const FusionConfig& f) {
    FusionSpec spec;
    spec.tabular = f.tabular;
    for (const auto& m : f.modalities) spec.modalities.push_back(m.spec);
    return spec;
}

}  // namespace comet
