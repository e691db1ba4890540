// comet: command-line front end for the fusion, PAL, hierarchy and
// diagnostics pipelines. Exit codes: 0 ok, 1 runtime failure, 2 bad config.

#include "comet/config.hpp"
#include "comet/fusion.hpp"
#include "comet/hierarchy.hpp"
#include "comet/metrics.hpp"
#include "comet/pal.hpp"
#include "comet/parallel.hpp"
#include "comet/remote_predictor.hpp"
#include "comet/split.hpp"
#include "comet/stats.hpp"
#include "comet/synthetic.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace comet;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

void write_text(const fs::path& path, const std::string& text) {
    if (!path.parent_path().empty()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw CometError("cannot write " + path.string());
    out << text;
    if (!out) throw CometError("failed writing " + path.string());
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

// Wall-clock numbers differ between runs, so they are only written on request.
bool g_write_timings = false;

void write_timings(const fs::path& dir, const json& j) {
    if (g_write_timings) write_json(dir / "timings.json", j);
}

json confusion_json(const std::vector<std::vector<std::size_t>>& m) {
    json out = json::array();
    for (const auto& row : m) out.push_back(row);
    return out;
}

// Dataset split into support (train) and query (test) with the tabular block
// encoded from support statistics only.
struct Prepared {
    RunConfig cfg;
    LabeledDataset support;
    LabeledDataset query;
    std::optional<TabularEncoding> tabular_encoding;
};

Prepared prepare(const fs::path& config_path, bool need_tree) {
    Prepared p;
    p.cfg = read_run_config(config_path);
    check_inputs_exist(p.cfg, need_tree || p.cfg.hierarchy.enabled);
    LoadedData data = load_data(p.cfg.data);
    const auto parts = split_indices(data.dataset.labels, p.cfg.eval.split_fraction, p.cfg.eval.stratified, p.cfg.eval.seed);
    p.tabular_encoding = encode_tabular_block(data, parts.first);
    data.dataset.validate();
    p.support = select_rows(data.dataset, parts.first);
    p.query = select_rows(data.dataset, parts.second);
    return p;
}

const TokenEmbeddingSet& token_modality(const LabeledDataset& ds, const std::string& name) {
    const auto& block = find_modality(ds, name);
    const auto* tokens = std::get_if<TokenEmbeddingSet>(&block);
    if (!tokens) throw SchemaError("modality '" + name + "' holds pooled features, PAL needs token sets");
    return *tokens;
}

std::string pal_modality_name(const RunConfig& cfg, const LabeledDataset& ds) {
    if (!cfg.pal.modality.empty()) {
        if (!ds.modalities.count(cfg.pal.modality))
            throw SchemaError("pal.modality '" + cfg.pal.modality + "' is not listed under data.modalities");
        return cfg.pal.modality;
    }
    std::vector<std::string> candidates;
    for (const auto& [name, block] : ds.modalities)
        if (std::holds_alternative<TokenEmbeddingSet>(block)) candidates.push_back(name);
    if (candidates.size() != 1)
        throw SchemaError("set pal.modality: the data has " + std::to_string(candidates.size()) + " token modalities");
    return candidates.front();
}

// PAL poolers for fusion modalities: loaded from file when given, otherwise
// fitted on the support part with the [pal] settings.
FusionSpec resolve_fusion(const RunConfig& cfg, const LabeledDataset& support, const InContextClassifier& predictor,
                          const fs::path& out_dir, json& timings) {
    FusionSpec spec = fusion_spec_of(cfg.fusion);
    if (spec.modalities.empty()) {
        for (const auto& [name, block] : support.modalities) {
            ModalitySpec m;
            m.name = name;
            spec.modalities.push_back(m);
        }
    }
    for (std::size_t i = 0; i < spec.modalities.size(); ++i) {
        auto& m = spec.modalities[i];
        if (m.pooling != PoolingKind::pal) continue;
        const auto& tokens = token_modality(support, m.name);
        const auto& pooler_path = i < cfg.fusion.modalities.size() ? cfg.fusion.modalities[i].pooler : std::nullopt;
        if (pooler_path) {
            std::ifstream in(*pooler_path);
            std::stringstream ss;
            ss << in.rdbuf();
            const auto j = json::parse(ss.str(), nullptr, false);
            if (j.is_discarded()) throw SchemaError("pooler file " + pooler_path->string() + " is not valid JSON");
            m.pal = pal_pooler_from_json(j);
            if (m.pal->d() != tokens.d)
                throw SchemaError("pooler for '" + m.name + "' has d=" + std::to_string(m.pal->d()) + ", tokens have d=" +
                                  std::to_string(tokens.d));
        } else {
            const auto t0 = Clock::now();
            auto fit = fit_pal_pooler(tokens, predictor, cfg.pal.fit);
            timings["pal_fit_seconds"][m.name] = seconds_since(t0);
            m.pal = fit.pooler;
            write_json(out_dir / ("pooler_" + m.name + ".json"), to_json(fit.pooler));
            write_json(out_dir / ("pal_report_" + m.name + ".json"), to_json(fit.report));
        }
    }
    return spec;
}

json block_summary(const FittedFusion& f) {
    json blocks = json::array();
    if (f.tabular) blocks.push_back({{"name", "tabular"}, {"input_dim", f.tabular_dim}, {"output_dim", f.tabular_dim}});
    for (const auto& m : f.modalities) {
        json b{{"name", m.spec.name}, {"pooling", to_string(m.spec.pooling)}, {"input_dim", m.input_dim},
               {"output_dim", m.output_dim()}};
        if (m.pca) {
            double ev = 0.0;
            for (Eigen::Index k = 0; k < m.pca->explained_variance_ratio.size(); ++k) ev += m.pca->explained_variance_ratio(k);
            b["explained_variance"] = ev;
        }
        blocks.push_back(std::move(b));
    }
    return blocks;
}

HierModel fit_hier_model(const Prepared& p, const LabelTree& tree, const FusionSpec& spec) {
    HierConfig hc;
    hc.budget = p.cfg.hierarchy.budget;
    hc.shared_pca = p.cfg.hierarchy.shared_pca;
    hc.seed = p.cfg.eval.seed;
    return fit_hier(p.support, tree, spec, hc);
}

LabelTree load_tree_for(const RunConfig& cfg, const LabeledDataset& support) {
    LabelTree tree = read_label_tree(*cfg.data.tree);
    if (tree.num_classes() != support.num_classes())
        throw SchemaError("label tree has " + std::to_string(tree.num_classes()) + " leaf classes, data has " +
                          std::to_string(support.num_classes()));
    return tree;
}

void write_hier_outputs(const fs::path& dir, const HierModel& model, const LabeledDataset& query,
                        const HierPrediction& pred, const HierReport& report, json& timings) {
    const auto& tree = model.tree;
    write_json(dir / "hier_report.json", to_json(report, tree, model.config.budget));
    json confusions = json::array();
    for (const auto& s : report.subtasks) {
        json children = json::array();
        for (int c : tree.node(s.node).children) children.push_back(tree.node(c).id);
        confusions.push_back({{"node", tree.node(s.node).id}, {"children", children}, {"confusion", s.confusion}});
    }
    write_json(dir / "confusions.json", confusions);
    write_json(dir / "traces.json", traces_json(pred, query, tree));
    timings["hierarchy"] = timings_json(report, tree);
}

int cmd_fuse_predict(const fs::path& config_path) {
    const auto t0 = Clock::now();
    const Prepared p = prepare(config_path, false);
    const auto& cfg = p.cfg;
    const fs::path out = cfg.output_dir;
    fs::create_directories(out);
    const auto predictor = make_predictor(cfg.predictor);
    json timings;
    const FusionSpec spec = resolve_fusion(cfg, p.support, *predictor, out, timings);

    json metrics{{"command", "fuse-predict"}, {"predictor", predictor->name()}, {"n_support", p.support.n()},
                 {"n_query", p.query.n()}, {"num_classes", p.support.num_classes()},
                 {"class_names", p.support.class_names}};
    Matrix probabilities;
    Labels predicted;
    if (cfg.hierarchy.enabled) {
        const LabelTree tree = load_tree_for(cfg, p.support);
        const auto model = fit_hier_model(p, tree, spec);
        const auto t1 = Clock::now();
        const auto pred = hier_predict(model, p.query, *predictor);
        const auto report = evaluate_hier(model, p.query, pred);
        timings["predict_seconds"] = seconds_since(t1);
        write_hier_outputs(out, model, p.query, pred, report, timings);
        predicted = pred.leaf_class;
        // The hierarchical path yields a leaf decision, stored one-hot.
        probabilities = Matrix::Zero(static_cast<Eigen::Index>(p.query.n()), p.support.num_classes());
        for (std::size_t q = 0; q < predicted.size(); ++q) probabilities(static_cast<Eigen::Index>(q), predicted[q]) = 1.0;
        metrics["mode"] = "hierarchical";
        metrics["subtask_count"] = model.subtasks.size();
    } else {
        const FittedFusion fused = fit_fusion(p.support, spec);
        write_text(out / "fusion.cfus", std::string(encode_fusion(fused).data(), encode_fusion(fused).size()));
        const auto t1 = Clock::now();
        const auto result = comet_predict(fused, p.support, p.query, *predictor);
        timings["predict_seconds"] = seconds_since(t1);
        probabilities = result.probabilities;
        predicted = result.predicted;
        metrics["mode"] = "flat";
        metrics["fused_dim"] = fused.fused_dim();
        metrics["blocks"] = block_summary(fused);
    }
    metrics["metrics"] = {{"accuracy", accuracy(p.query.labels, predicted)},
                          {"macro_f1", macro_f1(p.query.labels, predicted)}};
    metrics["confusion"] = confusion_json(confusion_matrix(p.query.labels, predicted, p.support.num_classes()));
    if (p.tabular_encoding) write_json(out / "tabular_encoding.json", to_json(*p.tabular_encoding));

    FeatureMatrix pm;
    pm.values = probabilities;
    pm.sample_ids = p.query.sample_ids;
    pm.labels = predicted;
    pm.num_classes = p.support.num_classes();
    write_embeddings(out / "predictions.cemb", pm);
    write_json(out / "metrics.json", metrics);
    timings["total_seconds"] = seconds_since(t0);
    write_timings(out, timings);
    std::cout << "accuracy " << metrics["metrics"]["accuracy"].get<double>() << "  macro_f1 "
              << metrics["metrics"]["macro_f1"].get<double>() << "  -> " << out.string() << "\n";
    return 0;
}

int cmd_pal_fit(const fs::path& config_path) {
    const auto t0 = Clock::now();
    const Prepared p = prepare(config_path, false);
    const auto& cfg = p.cfg;
    const fs::path out = cfg.output_dir;
    fs::create_directories(out);
    const auto predictor = make_predictor(cfg.predictor);
    const std::string name = pal_modality_name(cfg, p.support);
    const auto& train = token_modality(p.support, name);
    const auto& test = token_modality(p.query, name);

    const auto fit = fit_pal_pooler(train, *predictor, cfg.pal.fit);
    const int C = p.support.num_classes();
    const std::size_t pca_dim = cfg.pal.fit.pal_pca_dim;
    json report = to_json(fit.report);
    report["modality"] = name;
    report["holdout"] = {
        {"n", test.n()},
        {"mean_pooling_accuracy", pooled_accuracy(train, test, PalPooler::mean_pooling(train.d), pca_dim, *predictor, C)},
        {"pal_accuracy", pooled_accuracy(train, test, fit.pooler, pca_dim, *predictor, C)}};
    write_json(out / "pooler.json", to_json(fit.pooler));
    write_json(out / "fit_report.json", report);
    write_json(out / "heatmap.json", pal_heatmap(test, fit.pooler));
    write_timings(out, {{"iterations", timings_json(fit.report)}, {"total_seconds", seconds_since(t0)}});
    std::cout << "best iteration " << fit.report.best_iteration << "  holdout mean "
              << report["holdout"]["mean_pooling_accuracy"].get<double>() << "  pal "
              << report["holdout"]["pal_accuracy"].get<double>() << "  -> " << out.string() << "\n";
    return 0;
}

int cmd_hier(const fs::path& config_path) {
    const auto t0 = Clock::now();
    const Prepared p = prepare(config_path, true);
    const auto& cfg = p.cfg;
    const fs::path out = cfg.output_dir;
    fs::create_directories(out);
    const auto predictor = make_predictor(cfg.predictor);
    json timings;
    const FusionSpec spec = resolve_fusion(cfg, p.support, *predictor, out, timings);
    const LabelTree tree = load_tree_for(cfg, p.support);
    const auto model = fit_hier_model(p, tree, spec);
    const auto pred = hier_predict(model, p.query, *predictor);
    const auto report = evaluate_hier(model, p.query, pred);
    write_hier_outputs(out, model, p.query, pred, report, timings);
    timings["total_seconds"] = seconds_since(t0);
    write_timings(out, timings);
    std::cout << "leaf accuracy " << report.leaf_accuracy << "  macro_f1 " << report.macro_f1 << "  subtasks "
              << report.subtasks.size() << "  -> " << out.string() << "\n";
    return 0;
}

int cmd_diagnostics(const fs::path& config_path) {
    const auto t0 = Clock::now();
    const Prepared p = prepare(config_path, false);
    const auto& cfg = p.cfg;
    const fs::path out = cfg.output_dir;
    fs::create_directories(out);
    // Accuracy in the sweep always uses the reference predictor.
    const ReferencePredictor reference(cfg.predictor.reference);
    json timings;
    const FusionSpec spec = resolve_fusion(cfg, p.support, reference, out, timings);
    std::string name = cfg.diagnostics.modality;
    if (name.empty()) name = spec.modalities.empty() ? std::string() : spec.modalities.front().name;
    if (name.empty()) throw SchemaError("diagnostics needs a modality");
    const ModalitySpec* ms = nullptr;
    for (const auto& m : spec.modalities)
        if (m.name == name) ms = &m;
    ModalitySpec fallback;
    fallback.name = name;
    if (!ms) ms = &fallback;
    const Matrix sup = pool_modality(find_modality(p.support, name), *ms);
    const Matrix qry = pool_modality(find_modality(p.query, name), *ms);
    const int C = p.support.num_classes();
    const double total_variance = sample_covariance(sup, sup.colwise().mean().transpose()).trace();

    json rows = json::array();
    double best_acc = -1.0;
    std::size_t best_dim = 0;
    for (std::size_t dim : cfg.diagnostics.dims) {
        const auto pca = fit_pca(sup, dim);
        const Matrix zs = project(pca, sup);
        const Matrix zq = project(pca, qry);
        const Labels pred = argmax_rows(reference.predict(zq, zs, p.support.labels, C));
        const auto rank = rank_diagnostics(zs, total_variance);
        const double acc = accuracy(p.query.labels, pred);
        rows.push_back({{"dim", dim}, {"effective_dim", pca.output_dim()}, {"accuracy", acc},
                        {"macro_f1", macro_f1(p.query.labels, pred)}, {"effective_rank", rank.effective_rank},
                        {"normalized_effective_rank", rank.normalized_effective_rank},
                        {"explained_variance", rank.explained_variance}, {"product", rank.product}});
        if (acc > best_acc) {
            best_acc = acc;
            best_dim = dim;
        }
    }
    const auto raw = rank_diagnostics(sup);
    write_json(out / "sweep.json", {{"modality", name}, {"pooling", to_string(ms->pooling)}, {"input_dim", sup.cols()},
                                    {"n_support", p.support.n()}, {"n_query", p.query.n()},
                                    {"unprojected", {{"normalized_effective_rank", raw.normalized_effective_rank},
                                                     {"effective_rank", raw.effective_rank},
                                                     {"explained_variance", raw.explained_variance},
                                                     {"explained_variance_measured", raw.explained_variance_measured}}},
                                    {"rows", rows}, {"best_dim", best_dim}});
    timings["total_seconds"] = seconds_since(t0);
    write_timings(out, timings);
    std::cout << "best dim " << best_dim << " (accuracy " << best_acc << ")  -> " << out.string() << "\n";
    return 0;
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty()) out.push_back(item);
    return out;
}

struct IngestArgs {
    fs::path csv, out, encoding_in;
    std::string id_column, label_column, numeric, categorical, class_names;
};

int cmd_ingest(const IngestArgs& a) {
    if (!fs::is_regular_file(a.csv)) throw SchemaError("CSV not found: " + a.csv.string());
    TabularSchema schema{a.id_column, split_list(a.numeric), split_list(a.categorical)};
    if (schema.numeric.empty() && schema.categorical.empty()) throw SchemaError("name at least one numeric or categorical column");
    const RawTable table = read_csv_table(a.csv);
    TabularEncoding enc;
    if (!a.encoding_in.empty()) {
        std::ifstream in(a.encoding_in);
        if (!in) throw SchemaError("encoding file not found: " + a.encoding_in.string());
        std::stringstream ss;
        ss << in.rdbuf();
        const auto j = json::parse(ss.str(), nullptr, false);
        if (j.is_discarded()) throw SchemaError("encoding file is not valid JSON");
        enc = tabular_encoding_from_json(j);
    } else {
        enc = fit_tabular_encoding(table, schema);
    }
    FeatureMatrix m = encode_tabular(table, enc);
    if (!a.label_column.empty()) {
        const auto col = tabular_detail::column_index(table, a.label_column);
        const auto names = split_list(a.class_names);
        Labels y;
        for (const auto& row : table.rows) {
            const auto& cell = row[col];
            const auto it = std::find(names.begin(), names.end(), cell);
            if (it != names.end()) {
                y.push_back(static_cast<int>(it - names.begin()));
                continue;
            }
            std::size_t used = 0;
            int v = -1;
            try {
                v = std::stoi(cell, &used);
            } catch (const std::exception&) {
                used = 0;
            }
            if (cell.empty() || used != cell.size() || v < 0)
                throw DataError("label '" + cell + "' is neither a listed class name nor a class index");
            y.push_back(v);
        }
        m.labels = y;
        m.num_classes = count_classes(y);
    }
    write_embeddings(a.out, m);
    fs::path enc_path = a.out;
    enc_path += ".encoding.json";
    write_json(enc_path, to_json(enc));
    std::cout << "wrote " << m.n() << " x " << m.d() << " to " << a.out.string() << "\n";
    return 0;
}

// Conformance probe for a remote predictor service.
int cmd_serve_check(const RemotePredictorConfig& rc, const fs::path& out_path, std::uint64_t seed) {
    RemoteClient client(rc);
    json checks = json::array();
    bool all_ok = true;
    auto record = [&](const std::string& name, bool ok, const std::string& detail) {
        checks.push_back({{"check", name}, {"pass", ok}, {"detail", detail}});
        all_ok = all_ok && ok;
        std::cout << (ok ? "PASS " : "FAIL ") << name << (detail.empty() ? "" : "  (" + detail + ")") << "\n";
    };
    auto attempt = [&](const std::string& name, auto&& fn) {
        try {
            fn();
        } catch (const std::exception& e) {
            record(name, false, e.what());
        }
    };

    Rng rng(seed);
    const int C = 3;
    const Eigen::Index d = 5, n = 30, m = 11;
    Matrix support(n, d), query(m, d);
    Labels labels(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) {
        labels[static_cast<std::size_t>(i)] = static_cast<int>(i % C);
        for (Eigen::Index j = 0; j < d; ++j) support(i, j) = rng.normal() + 2.0 * (j == i % C ? 1.0 : 0.0);
    }
    for (Eigen::Index i = 0; i < m; ++i)
        for (Eigen::Index j = 0; j < d; ++j) query(i, j) = rng.normal();

    std::string session;
    attempt("session_open", [&] {
        session = client.open_session(support, labels, C);
        record("session_open", !session.empty(), "");
    });
    if (session.empty()) {
        write_json(out_path, {{"endpoint", rc.endpoint}, {"pass", false}, {"checks", checks}});
        return 1;
    }
    Matrix whole;
    attempt("predict_shape_and_stochastic", [&] {
        whole = client.predict_batch(session, query, 0, m, C);
        record("predict_shape_and_stochastic", whole.rows() == m && whole.cols() == C, "");
    });
    if (whole.size() > 0) {
        attempt("batching_invariance", [&] {
            Matrix singles(m, C), random(m, C);
            for (Eigen::Index i = 0; i < m; ++i) singles.row(i) = client.predict_batch(session, query, i, i + 1, C);
            Eigen::Index at = 0;
            while (at < m) {
                const Eigen::Index len = std::min<Eigen::Index>(m - at, 1 + static_cast<Eigen::Index>(rng.below(4)));
                random.middleRows(at, len) = client.predict_batch(session, query, at, at + len, C);
                at += len;
            }
            const double diff = std::max((singles - whole).cwiseAbs().maxCoeff(), (random - whole).cwiseAbs().maxCoeff());
            record("batching_invariance", diff <= 1e-6, "max abs diff " + std::to_string(diff));
        });
        attempt("repeat_determinism", [&] {
            const Matrix again = client.predict_batch(session, query, 0, m, C);
            const double diff = (again - whole).cwiseAbs().maxCoeff();
            record("repeat_determinism", diff <= 1e-6, "max abs diff " + std::to_string(diff));
        });
    }
    attempt("distinct_session_ids", [&] {
        const std::string other = client.open_session(support, labels, C);
        record("distinct_session_ids", other != session, "");
        client.delete_session(other);
    });
    attempt("single_class_rejected", [&] {
        json req{{"d", d}, {"C", 1}, {"class_ids", {0}}};
        req["support"]["features"] = json::array({json::array({0.0, 0.0, 0.0, 0.0, 0.0})});
        req["support"]["labels"] = {0};
        const auto res = client.send("POST", "/session", req.dump());
        record("single_class_rejected", res.status == 422, "status " + std::to_string(res.status));
    });
    attempt("delete_lifecycle", [&] {
        const int first = client.delete_session(session);
        json req{{"session_id", session}, {"queries", json::array({json::array({0.0, 0.0, 0.0, 0.0, 0.0})})}};
        const int after = client.send("POST", "/predict", req.dump()).status;
        const int second = client.delete_session(session);
        record("delete_lifecycle", first == 200 && after == 404 && second == 404,
               "delete " + std::to_string(first) + ", predict after delete " + std::to_string(after) +
                   ", second delete " + std::to_string(second));
    });
    attempt("predictor_round_trip", [&] {
        RemotePredictor remote(rc);
        const Matrix p = remote.predict(query, support, labels, C);
        check_row_stochastic(p, m, C, 1e-6);
        record("predictor_round_trip", true, "");
    });
    write_json(out_path, {{"endpoint", rc.endpoint}, {"pass", all_ok}, {"checks", checks}});
    return all_ok ? 0 : 1;
}

int cmd_synth(const fs::path& out, std::size_t n, std::uint64_t seed) {
    const auto data = synth::bundled(n, seed);
    fs::create_directories(out);
    write_embeddings(out / "image.cemb", data.image);
    write_embeddings(out / "text.cemb", data.text);
    std::ostringstream tab;
    for (std::size_t c = 0; c < data.tabular_header.size(); ++c) tab << (c ? "," : "") << data.tabular_header[c];
    tab << "\n";
    for (const auto& row : data.tabular_rows) {
        for (std::size_t c = 0; c < row.size(); ++c) tab << (c ? "," : "") << row[c];
        tab << "\n";
    }
    write_text(out / "tabular.csv", tab.str());
    std::ostringstream labels;
    labels << "sample_id,label\n";
    for (std::size_t i = 0; i < data.labels.size(); ++i)
        labels << data.sample_ids[i] << "," << data.class_names[static_cast<std::size_t>(data.labels[i])] << "\n";
    write_text(out / "labels.csv", labels.str());
    write_json(out / "tree.json", data.tree.to_json());
    std::cout << "wrote " << n << " samples to " << out.string() << "\n";
    return 0;
}

// Runs a command and maps failures to the exit-code contract.
template <typename Fn>
int guarded(Fn&& fn) {
    try {
        return fn();
    } catch (const SchemaError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const SpecError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"comet: multimodal in-context classification on precomputed embeddings"};
    app.require_subcommand(1);
    int threads = 1;
    app.add_option("--threads", threads, "worker threads (COMET_THREADS overrides; 1 is bit-deterministic)")
        ->check(CLI::PositiveNumber);
    app.add_flag("--timings", g_write_timings, "also write wall-clock timings.json next to the outputs");

    fs::path config;
    auto add_config_cmd = [&](const char* name, const char* help) {
        auto* sub = app.add_subcommand(name, help);
        sub->add_option("--config,-c", config, "run configuration JSON")->required();
        return sub;
    };
    auto* fuse = add_config_cmd("fuse-predict", "pool, project, concatenate and predict the query split");
    auto* pal = add_config_cmd("pal-fit", "fit a PAL pooler on one token modality");
    auto* hier = add_config_cmd("hier", "hierarchical prediction over a label tree");
    auto* diag = add_config_cmd("diagnostics", "PCA-dimension sweep with rank diagnostics");

    IngestArgs ingest_args;
    auto* ingest = app.add_subcommand("ingest", "encode a tabular CSV into a CEMB feature file");
    ingest->add_option("--csv", ingest_args.csv, "input CSV")->required();
    ingest->add_option("--out", ingest_args.out, "output CEMB path")->required();
    ingest->add_option("--id-column", ingest_args.id_column, "column holding sample ids");
    ingest->add_option("--numeric", ingest_args.numeric, "comma-separated numeric columns");
    ingest->add_option("--categorical", ingest_args.categorical, "comma-separated categorical columns");
    ingest->add_option("--label-column", ingest_args.label_column, "column holding class labels");
    ingest->add_option("--class-names", ingest_args.class_names, "comma-separated class names in index order");
    ingest->add_option("--encoding", ingest_args.encoding_in, "apply a saved encoding instead of fitting one");

    RemotePredictorConfig rc;
    fs::path check_out = "serve_check.json";
    std::uint64_t check_seed = 0;
    auto* serve = app.add_subcommand("serve-check", "wire-protocol conformance probe against a predictor service");
    serve->add_option("--endpoint", rc.endpoint, "service base URL")->required();
    serve->add_option("--timeout", rc.timeout_seconds, "per-request timeout in seconds");
    serve->add_option("--retries", rc.retries, "retries on connection errors and 5xx");
    serve->add_option("--out", check_out, "report path");
    serve->add_option("--seed", check_seed, "seed for the probe data");

    fs::path synth_out = "data/synthetic";
    std::size_t synth_n = 600;
    std::uint64_t synth_seed = 0;
    auto* synth_cmd = app.add_subcommand("synth", "write the bundled synthetic demo dataset");
    synth_cmd->add_option("--out", synth_out, "output directory");
    synth_cmd->add_option("--n", synth_n, "number of samples")->check(CLI::Range(40, 1000000));
    synth_cmd->add_option("--seed", synth_seed, "generator seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }
    set_num_threads(resolve_threads(threads));

    if (*fuse) return guarded([&] { return cmd_fuse_predict(config); });
    if (*pal) return guarded([&] { return cmd_pal_fit(config); });
    if (*hier) return guarded([&] { return cmd_hier(config); });
    if (*diag) return guarded([&] { return cmd_diagnostics(config); });
    if (*ingest) return guarded([&] { return cmd_ingest(ingest_args); });
    if (*serve) return guarded([&] { return cmd_serve_check(rc, check_out, check_seed); });
    if (*synth_cmd) return guarded([&] { return cmd_synth(synth_out, synth_n, synth_seed); });
    return 2;
}
