#pragma once

// Multimodal late fusion: pool each token modality, project it with a PCA
// fitted on the support, concatenate after the (unprojected) tabular block,
// and hand the result to an in-context classifier.

#include <chrono>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "comet/errors.hpp"
#include "comet/linalg.hpp"
#include "comet/metrics.hpp"
#include "comet/pooling.hpp"
#include "comet/predictor.hpp"
#include "comet/types.hpp"

namespace comet {

enum class PoolingKind { mean, cls, pal };

inline PoolingKind pooling_from_string(const std::string& s) {
    if (s == "mean") return PoolingKind::mean;
    if (s == "cls") return PoolingKind::cls;
    if (s == "pal") return PoolingKind::pal;
    throw SchemaError("unknown pooling '" + s + "' (expected mean, cls or pal)");
}

inline std::string to_string(PoolingKind k) {
    switch (k) {
        case PoolingKind::mean: return "mean";
        case PoolingKind::cls: return "cls";
        case PoolingKind::pal: return "pal";
    }
    return "mean";
}

struct ModalitySpec {
    std::string name;
    PoolingKind pooling = PoolingKind::mean;
    std::size_t cls_index = 0;
    std::optional<PalPooler> pal;  // required when pooling == pal
    std::size_t pca_dim = 256;     // 0 disables projection
};

struct FusionSpec {
    std::vector<ModalitySpec> modalities;
    bool tabular = true;  // pass the tabular block through when present
};

struct FittedModality {
    ModalitySpec spec;
    std::size_t input_dim = 0;
    std::optional<PcaProjection> pca;

    std::size_t output_dim() const { return pca ? pca->output_dim() : input_dim; }
};

struct FittedFusion {
    std::vector<FittedModality> modalities;
    bool tabular = false;
    std::size_t tabular_dim = 0;
    int num_classes = 0;
    std::vector<std::string> class_names;
    std::uint64_t support_fingerprint = 0;

    std::size_t fused_dim() const {
        std::size_t d = tabular ? tabular_dim : 0;
        for (const auto& m : modalities) d += m.output_dim();
        return d;
    }
};

// Pool one modality block to an n x d matrix.
inline Matrix pool_modality(const Modality& block, const ModalitySpec& spec) {
    if (const auto* fm = std::get_if<FeatureMatrix>(&block)) {
        if (spec.pooling != PoolingKind::mean)
            throw SpecError("modality '" + spec.name + "' is already pooled; only 'mean' pooling applies");
        return fm->values;
    }
    const auto& tokens = std::get<TokenEmbeddingSet>(block);
    switch (spec.pooling) {
        case PoolingKind::mean: return mean_pool(tokens).values;
        case PoolingKind::cls: return cls_select(tokens, spec.cls_index).values;
        case PoolingKind::pal:
            if (!spec.pal) throw SpecError("modality '" + spec.name + "' uses pal pooling without a fitted pooler");
            return pal_pool(tokens, *spec.pal).values;
    }
    throw SpecError("unreachable pooling kind");
}

inline const Modality& find_modality(const LabeledDataset& ds, const std::string& name) {
    const auto it = ds.modalities.find(name);
    if (it == ds.modalities.end()) throw SpecError("modality '" + name + "' is not present in the dataset");
    return it->second;
}

inline std::uint64_t fnv1a(const void* data, std::size_t size, std::uint64_t h = 1469598103934665603ULL) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < size; ++i) {
        h ^= p[i];
        h *= 1099511628211ULL;
    }
    return h;
}

namespace fusion_detail {

inline Matrix assemble(const FittedFusion& f, const LabeledDataset& ds) {
    std::vector<Matrix> blocks;
    if (f.tabular) {
        if (!ds.tabular) throw SpecError("fusion expects a tabular block");
        if (ds.tabular->d() != f.tabular_dim)
            throw SpecError("tabular block has " + std::to_string(ds.tabular->d()) + " columns, fusion expects " +
                            std::to_string(f.tabular_dim));
        blocks.push_back(ds.tabular->values);
    }
    for (const auto& m : f.modalities) {
        Matrix pooled = pool_modality(find_modality(ds, m.spec.name), m.spec);
        if (static_cast<std::size_t>(pooled.cols()) != m.input_dim)
            throw SpecError("modality '" + m.spec.name + "' has dimension " + std::to_string(pooled.cols()) +
                            ", fusion expects " + std::to_string(m.input_dim));
        blocks.push_back(m.pca ? project(*m.pca, pooled) : std::move(pooled));
    }
    Matrix out(static_cast<Eigen::Index>(ds.n()), static_cast<Eigen::Index>(f.fused_dim()));
    Eigen::Index col = 0;
    for (const auto& b : blocks) {
        out.middleCols(col, b.cols()) = b;
        col += b.cols();
    }
    return out;
}

}  // namespace fusion_detail

inline FittedFusion fit_fusion(const LabeledDataset& sup, const FusionSpec& spec) {
    sup.validate();
    if (spec.modalities.empty() && !(spec.tabular && sup.tabular))
        throw SpecError("fusion spec selects no features");
    FittedFusion f;
    f.num_classes = sup.num_classes();
    f.class_names = sup.class_names;
    if (spec.tabular && sup.tabular) {
        f.tabular = true;
        f.tabular_dim = sup.tabular->d();
    }
    for (const auto& ms : spec.modalities) {
        FittedModality fm;
        fm.spec = ms;
        const Matrix pooled = pool_modality(find_modality(sup, ms.name), ms);
        fm.input_dim = static_cast<std::size_t>(pooled.cols());
        if (ms.pca_dim > 0) fm.pca = fit_pca(pooled, ms.pca_dim);
        f.modalities.push_back(std::move(fm));
    }
    const Matrix fused = fusion_detail::assemble(f, sup);
    f.support_fingerprint = fnv1a(fused.data(), static_cast<std::size_t>(fused.size()) * sizeof(double));
    f.support_fingerprint = fnv1a(sup.labels.data(), sup.labels.size() * sizeof(int), f.support_fingerprint);
    return f;
}

// Columns: [tabular | modalities in spec order].
inline FeatureMatrix transform(const FittedFusion& f, const LabeledDataset& ds) {
    FeatureMatrix out;
    out.values = fusion_detail::assemble(f, ds);
    out.sample_ids = ds.sample_ids;
    if (!ds.labels.empty()) out.labels = ds.labels;
    out.num_classes = f.num_classes;
    if (!out.values.allFinite()) throw DataError("fused features contain NaN or Inf");
    return out;
}

struct ClassificationMetrics {
    double accuracy = 0.0;
    double macro_f1 = 0.0;
    std::size_t n = 0;
};

struct CometPrediction {
    Matrix probabilities;
    Labels predicted;
    std::optional<ClassificationMetrics> metrics;
};

inline ClassificationMetrics classification_metrics(const Labels& truth, const Labels& pred) {
    return {accuracy(truth, pred), macro_f1(truth, pred), truth.size()};
}

inline CometPrediction comet_predict(const FittedFusion& f, const LabeledDataset& sup, const LabeledDataset& qry,
                                     const InContextClassifier& predictor) {
    if (sup.labels.size() != sup.n()) throw DataError("support set must be labeled");
    const auto xs = transform(f, sup);
    const auto xq = transform(f, qry);
    CometPrediction out;
    out.probabilities = predictor.predict(xq.values, xs.values, sup.labels, f.num_classes);
    check_row_stochastic(out.probabilities, xq.values.rows(), f.num_classes, 1e-4);
    out.predicted = argmax_rows(out.probabilities);
    if (qry.labels.size() == qry.n() && qry.n() > 0) out.metrics = classification_metrics(qry.labels, out.predicted);
    return out;
}

// ---------------------------------------------------------------------------
// Binary artifact: "CFUS" | version u32 | header length u64 | JSON header |
// float64 LE arrays, per modality with a PCA: mean, components (row-major),
// eigenvalues, explained_variance_ratio; then theta for pal poolers.
// ---------------------------------------------------------------------------

namespace fusion_detail {

inline constexpr char kFusionMagic[4] = {'C', 'F', 'U', 'S'};
inline constexpr std::uint32_t kFusionVersion = 1;

inline void put_doubles(std::vector<char>& out, const double* p, std::size_t n) {
    const auto* b = reinterpret_cast<const char*>(p);
    out.insert(out.end(), b, b + n * sizeof(double));
}

}  // namespace fusion_detail

inline std::vector<char> encode_fusion(const FittedFusion& f) {
    nlohmann::json header;
    header["tabular"] = f.tabular;
    header["tabular_dim"] = f.tabular_dim;
    header["num_classes"] = f.num_classes;
    header["class_names"] = f.class_names;
    header["support_fingerprint"] = f.support_fingerprint;
    header["modalities"] = nlohmann::json::array();
    std::vector<char> blobs;
    for (const auto& m : f.modalities) {
        nlohmann::json j{{"name", m.spec.name}, {"pooling", to_string(m.spec.pooling)}, {"cls_index", m.spec.cls_index},
                         {"pca_dim", m.spec.pca_dim}, {"input_dim", m.input_dim}, {"has_pca", m.pca.has_value()}};
        if (m.pca) {
            j["pca_output_dim"] = m.pca->output_dim();
            j["total_variance"] = m.pca->total_variance;
            fusion_detail::put_doubles(blobs, m.pca->mean.data(), static_cast<std::size_t>(m.pca->mean.size()));
            fusion_detail::put_doubles(blobs, m.pca->components.data(), static_cast<std::size_t>(m.pca->components.size()));
            fusion_detail::put_doubles(blobs, m.pca->eigenvalues.data(), static_cast<std::size_t>(m.pca->eigenvalues.size()));
            fusion_detail::put_doubles(blobs, m.pca->explained_variance_ratio.data(),
                                       static_cast<std::size_t>(m.pca->explained_variance_ratio.size()));
        }
        j["has_pal"] = m.spec.pal.has_value();
        if (m.spec.pal) {
            j["pal_dim"] = m.spec.pal->d();
            j["pal_fitted_iteration"] = m.spec.pal->fitted_iteration;
            fusion_detail::put_doubles(blobs, m.spec.pal->theta.data(), m.spec.pal->d());
        }
        header["modalities"].push_back(std::move(j));
    }
    const std::string text = header.dump();
    std::vector<char> out(fusion_detail::kFusionMagic, fusion_detail::kFusionMagic + 4);
    const std::uint32_t version = fusion_detail::kFusionVersion;
    const auto len = static_cast<std::uint64_t>(text.size());
    out.insert(out.end(), reinterpret_cast<const char*>(&version), reinterpret_cast<const char*>(&version) + 4);
    out.insert(out.end(), reinterpret_cast<const char*>(&len), reinterpret_cast<const char*>(&len) + 8);
    out.insert(out.end(), text.begin(), text.end());
    out.insert(out.end(), blobs.begin(), blobs.end());
    return out;
}

inline FittedFusion decode_fusion(const std::vector<char>& bytes) {
    std::size_t pos = 0;
    auto need = [&](std::size_t n) {
        if (bytes.size() - pos < n) throw FormatError("truncated fusion artifact");
    };
    need(16);
    if (std::memcmp(bytes.data(), fusion_detail::kFusionMagic, 4) != 0) throw FormatError("not a fusion artifact");
    std::uint32_t version;
    std::uint64_t len;
    std::memcpy(&version, bytes.data() + 4, 4);
    std::memcpy(&len, bytes.data() + 8, 8);
    if (version != fusion_detail::kFusionVersion) throw FormatError("unsupported fusion artifact version");
    pos = 16;
    need(len);
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                                       bytes.begin() + static_cast<std::ptrdiff_t>(pos + len));
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("bad fusion header: ") + e.what());
    }
    pos += len;
    auto take = [&](double* dst, std::size_t n) {
        need(n * sizeof(double));
        std::memcpy(dst, bytes.data() + pos, n * sizeof(double));
        pos += n * sizeof(double);
    };
    FittedFusion f;
    try {
        f.tabular = header.at("tabular").get<bool>();
        f.tabular_dim = header.at("tabular_dim").get<std::size_t>();
        f.num_classes = header.at("num_classes").get<int>();
        f.class_names = header.at("class_names").get<std::vector<std::string>>();
        f.support_fingerprint = header.at("support_fingerprint").get<std::uint64_t>();
        for (const auto& j : header.at("modalities")) {
            FittedModality m;
            m.spec.name = j.at("name").get<std::string>();
            m.spec.pooling = pooling_from_string(j.at("pooling").get<std::string>());
            m.spec.cls_index = j.at("cls_index").get<std::size_t>();
            m.spec.pca_dim = j.at("pca_dim").get<std::size_t>();
            m.input_dim = j.at("input_dim").get<std::size_t>();
            if (j.at("has_pca").get<bool>()) {
                const auto d = static_cast<Eigen::Index>(m.input_dim);
                const auto k = static_cast<Eigen::Index>(j.at("pca_output_dim").get<std::size_t>());
                PcaProjection p;
                p.total_variance = j.at("total_variance").get<double>();
                p.mean.resize(d);
                p.components.resize(d, k);
                p.eigenvalues.resize(k);
                p.explained_variance_ratio.resize(k);
                take(p.mean.data(), static_cast<std::size_t>(d));
                take(p.components.data(), static_cast<std::size_t>(d * k));
                take(p.eigenvalues.data(), static_cast<std::size_t>(k));
                take(p.explained_variance_ratio.data(), static_cast<std::size_t>(k));
                m.pca = std::move(p);
            }
            if (j.at("has_pal").get<bool>()) {
                PalPooler pal;
                pal.fitted_iteration = j.at("pal_fitted_iteration").get<int>();
                pal.theta.resize(static_cast<Eigen::Index>(j.at("pal_dim").get<std::size_t>()));
                take(pal.theta.data(), pal.d());
                m.spec.pal = std::move(pal);
            }
            f.modalities.push_back(std::move(m));
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("bad fusion header: ") + e.what());
    }
    if (pos != bytes.size()) throw FormatError("trailing bytes in fusion artifact");
    return f;
}

inline void write_fusion(const std::filesystem::path& path, const FittedFusion& f) {
    const auto bytes = encode_fusion(f);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot open " + path.string() + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

inline FittedFusion read_fusion(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open " + path.string());
    const std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode_fusion(bytes);
}

}  // namespace comet
