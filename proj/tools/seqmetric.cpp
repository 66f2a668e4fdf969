// seqmetric command-line tool: train, eval, embed, retrieve, ablate.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "seqmetric/run.hpp"

using namespace seqmetric;
namespace fs = std::filesystem;

namespace {

struct GlobalFlags {
  std::string config;
  std::string profile;
  std::optional<std::uint64_t> seed;
  std::string out;
};

struct DataFlags {
  std::string synthetic;
  std::string manifest;
};

struct TrainFlags {
  std::string loss;
  std::optional<double> margin;
  std::optional<std::size_t> updates;
  std::optional<double> lr;
  std::vector<std::string> sets;
  bool quiet = false;
};

struct EvalFlags {
  std::string metrics;
  std::string tpr_levels;
};

void set_path(nlohmann::json& j, const std::string& dotted, nlohmann::json value) {
  nlohmann::json* cur = &j;
  std::size_t start = 0;
  while (true) {
    const std::size_t dot = dotted.find('.', start);
    const std::string key = dotted.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (key.empty()) throw ConfigError("--set: malformed field '" + dotted + "'");
    if (dot == std::string::npos) {
      (*cur)[key] = std::move(value);
      return;
    }
    if (!cur->contains(key)) (*cur)[key] = nlohmann::json::object();
    cur = &(*cur)[key];
    start = dot + 1;
  }
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

// "95,90,80" or "0.95,0.9" -> fractions.
std::vector<double> parse_levels(const std::string& s) {
  std::vector<double> out;
  for (const auto& item : split_list(s)) {
    double v = 0.0;
    try {
      v = std::stod(item);
    } catch (const std::exception&) {
      throw ConfigError("eval.tpr_levels: cannot parse '" + item + "'");
    }
    out.push_back(v > 1.0 ? v / 100.0 : v);
  }
  return out;
}

nlohmann::json base_patch(const GlobalFlags& g) {
  nlohmann::json patch = nlohmann::json::object();
  if (!g.config.empty()) {
    try {
      patch = nlohmann::json::parse(read_file(g.config));
    } catch (const nlohmann::json::parse_error& e) {
      throw ConfigError(g.config + ": " + e.what());
    }
  }
  if (!g.profile.empty()) patch["profile"] = g.profile;
  if (g.seed) patch["seed"] = *g.seed;
  if (!g.out.empty()) patch["out"] = g.out;
  return patch;
}

void apply_data(nlohmann::json& patch, const DataFlags& d) {
  if (!d.synthetic.empty()) {
    set_path(patch, "data.synthetic", d.synthetic);
    set_path(patch, "data.manifest", "");
  }
  if (!d.manifest.empty()) {
    set_path(patch, "data.manifest", d.manifest);
    set_path(patch, "data.synthetic", "");
  }
}

void apply_train(nlohmann::json& patch, const TrainFlags& t) {
  if (!t.loss.empty()) set_path(patch, "loss.kind", t.loss);
  if (t.margin) set_path(patch, "loss.margin", *t.margin);
  if (t.updates) set_path(patch, "train.total_updates", *t.updates);
  if (t.lr) set_path(patch, "train.lr0", *t.lr);
  for (const auto& s : t.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError("--set: expected field=value, got '" + s + "'");
    const std::string text = s.substr(eq + 1);
    nlohmann::json value;
    try {
      value = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error&) {
      value = text;
    }
    set_path(patch, s.substr(0, eq), std::move(value));
  }
}

void apply_eval(nlohmann::json& patch, const EvalFlags& e) {
  if (!e.metrics.empty()) set_path(patch, "eval.metrics", split_list(e.metrics));
  if (!e.tpr_levels.empty()) set_path(patch, "eval.tpr_levels", parse_levels(e.tpr_levels));
}

std::string fnv_hex(const std::string& bytes) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void print_reports(const std::vector<EvalReport>& reports, const std::vector<double>& levels) {
  std::cout << EvalReport::table_header(levels) << '\n';
  for (const auto& r : reports) std::cout << r.table_row() << '\n';
  for (const auto& r : reports) {
    for (const auto& w : r.fpr.warnings) std::cerr << "warning: " << w << '\n';
  }
}

TrainState train_run(const RunConfig& config, const DataSplit& data, const std::string& out_dir, bool quiet) {
  const auto t0 = std::chrono::steady_clock::now();
  TrainState state;
  double window_loss = 0.0;
  std::size_t window_n = 0;
  const TrainArtifacts a = run_training(config, data, out_dir, &state, [&](const StepRecord& r) {
    window_loss += r.loss;
    ++window_n;
    const std::size_t done = r.update_index + 1;
    if (!quiet && (done % 50 == 0 || done == config.train.total_updates)) {
      const double sec = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      std::fprintf(stderr, "update %zu/%zu  loss %.4f  lr %.3g  %.0fs\n", done, config.train.total_updates,
                   window_loss / static_cast<double>(window_n), r.lr, sec);
      window_loss = 0.0;
      window_n = 0;
    }
  });
  std::cout << "checkpoint " << a.checkpoint_path << " (fnv " << fnv_hex(read_file(a.checkpoint_path)) << ")\n";
  std::cout << "log " << a.log_path << '\n';
  return state;
}

struct LoadedRun {
  RunConfig config;
  DataSplit data;
  EncoderConfig encoder;
  TrainState state;
};

LoadedRun load_run(const std::string& run_dir, const GlobalFlags& g, const DataFlags& d, const EvalFlags* e) {
  nlohmann::json patch;
  try {
    patch = nlohmann::json::parse(read_file((fs::path(run_dir) / "config.json").string()));
  } catch (const nlohmann::json::parse_error& err) {
    throw ConfigError(run_dir + "/config.json: " + err.what());
  }
  if (g.seed) patch["seed"] = *g.seed;
  apply_data(patch, d);
  if (e) apply_eval(patch, *e);
  LoadedRun r;
  r.config = run_config_from_json(patch);
  r.data = load_data(r.config);
  r.encoder = resolved_encoder(r.config, r.data);
  r.state = load_checkpoint((fs::path(run_dir) / "checkpoint.txt").string(), r.encoder);
  return r;
}

int cmd_train(const GlobalFlags& g, const DataFlags& d, const TrainFlags& t) {
  nlohmann::json patch = base_patch(g);
  apply_data(patch, d);
  apply_train(patch, t);
  const RunConfig config = run_config_from_json(patch);
  std::cout << "config " << prepare_run_dir(config, config.out) << '\n';
  const DataSplit data = load_data(config);
  std::cout << "split " << data.hash << "  train " << data.train.size() << "  test " << data.test.size() << '\n';
  train_run(config, data, config.out, t.quiet);
  return 0;
}

int cmd_eval(const GlobalFlags& g, const DataFlags& d, const EvalFlags& e, const std::string& run_dir,
             bool attention) {
  LoadedRun run = load_run(run_dir, g, d, &e);
  const std::string out = g.out.empty() ? run_dir : g.out;
  const auto reports = run_evaluation(run.config, run.data, &run.state.params, out);
  std::cout << "split " << run.data.hash << '\n';
  print_reports(reports, run.config.eval.tpr_levels);
  for (const auto& r : reports) {
    for (const auto& n : r.notes) std::cout << "note [" << r.metric << "]: " << n << '\n';
  }
  if (attention) {
    const auto traces = export_attention(run.data.test, run.state.params, run.encoder, 4);
    std::string text;
    for (const auto& t : traces) {
      nlohmann::ordered_json j;
      j["id"] = t.source_id;
      j["scores"] = t.scores;
      j["peak"] = t.peak;
      j["highlight"] = t.highlight;
      j["subsampled"] = t.subsampled;
      j["middle_third_mass"] = middle_third_mass(t.scores);
      text += j.dump() + "\n";
    }
    const std::string path = (fs::path(out) / "attention.jsonl").string();
    write_file(path, text);
    std::cout << "attention " << path << '\n';
  }
  return 0;
}

int cmd_embed(const GlobalFlags& g, const DataFlags& d, const std::string& run_dir, const std::string& split,
              std::string file) {
  LoadedRun run = load_run(run_dir, g, d, nullptr);
  std::vector<MotionSequence> seqs;
  if (split == "train" || split == "all") seqs.insert(seqs.end(), run.data.train.begin(), run.data.train.end());
  if (split == "test" || split == "all") seqs.insert(seqs.end(), run.data.test.begin(), run.data.test.end());
  if (seqs.empty()) throw ConfigError("--split: expected train, test or all");
  const Array emb = embed_all(seqs, run.state.params, run.encoder);
  std::string text;
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    nlohmann::ordered_json j;
    j["id"] = seqs[i].source_id;
    j["category"] = seqs[i].category;
    j["subject"] = seqs[i].subject ? nlohmann::ordered_json(*seqs[i].subject) : nlohmann::ordered_json(nullptr);
    std::vector<double> row(emb.cols());
    for (std::size_t c = 0; c < emb.cols(); ++c) row[c] = emb(i, c);
    j["embedding"] = row;
    text += j.dump() + "\n";
  }
  if (file.empty()) file = (fs::path(g.out.empty() ? run_dir : g.out) / ("embeddings_" + split + ".jsonl")).string();
  write_file(file, text);
  std::cout << seqs.size() << " embeddings -> " << file << '\n';
  return 0;
}

int cmd_retrieve(const GlobalFlags& g, const DataFlags& d, const std::string& run_dir, const std::string& query_id,
                 std::size_t k) {
  LoadedRun run = load_run(run_dir, g, d, nullptr);
  const MotionSequence* query = nullptr;
  for (const auto* part : {&run.data.test, &run.data.train}) {
    for (const auto& s : *part) {
      if (s.source_id == query_id && query == nullptr) query = &s;
    }
  }
  if (query == nullptr) throw std::invalid_argument("retrieve: unknown query id '" + query_id + "'");
  const auto& gallery = run.data.test;
  if (k > gallery.size()) {
    std::cerr << "warning: k = " << k << " exceeds the gallery size " << gallery.size() << "; returning all\n";
  }
  const auto learned = retrieve(*query, gallery, Metric::Learned, k, &run.state.params, &run.encoder);
  const auto dtw = retrieve(*query, gallery, Metric::Dtw, k, nullptr, nullptr, DistanceOptions{run.config.eval.dtw_cost});
  std::cout << "query " << query->source_id << " (" << query->category << ")\n";
  std::cout << "rank | learned | category | distance | dtw | category | distance\n";
  for (std::size_t i = 0; i < learned.size(); ++i) {
    const auto& a = gallery[learned[i].index];
    const auto& b = gallery[dtw[i].index];
    char da[32], db[32];
    std::snprintf(da, sizeof da, "%.6f", learned[i].distance);
    std::snprintf(db, sizeof db, "%.6f", dtw[i].distance);
    std::cout << i + 1 << " | " << a.source_id << " | " << a.category << " | " << da << " | " << b.source_id << " | "
              << b.category << " | " << db << '\n';
  }
  return 0;
}

int cmd_ablate(const GlobalFlags& g, const DataFlags& d, const TrainFlags& t, const EvalFlags& e) {
  nlohmann::json patch = base_patch(g);
  apply_data(patch, d);
  apply_train(patch, t);
  apply_eval(patch, e);
  RunConfig base = run_config_from_json(patch);
  base.eval.metrics = {"learned"};
  prepare_run_dir(base, base.out);
  const DataSplit data = load_data(base);

  struct Variant {
    std::string name, dir;
    RunConfig config;
  };
  std::vector<Variant> variants;
  variants.push_back({"MMD-NCA (full)", "full", base});
  variants.push_back({"without Attention", "no_attention", base});
  variants.back().config.encoder.attention_enabled = false;
  variants.push_back({"without LN", "no_ln", base});
  variants.back().config.encoder.layer_norm_enabled = false;
  variants.push_back({"Linear Kernel", "linear_kernel", base});
  variants.back().config.loss.kernel.family = KernelFamily::Linear;
  variants.push_back({"Polynomial Kernel", "polynomial_kernel", base});
  variants.back().config.loss.kernel.family = KernelFamily::Polynomial;

  std::ostringstream table;
  table << "split " << data.hash << '\n';
  std::string header = EvalReport::table_header(base.eval.tpr_levels);
  header.replace(0, 6, "variant");
  table << header << '\n';
  for (auto& v : variants) {
    const std::string dir = (fs::path(base.out) / v.dir).string();
    v.config.out = dir;
    prepare_run_dir(v.config, dir);
    std::cerr << "== " << v.name << '\n';
    const TrainState state = train_run(v.config, data, dir, t.quiet);
    EvalReport r = run_evaluation(v.config, data, &state.params, dir).front();
    std::string row = r.table_row();
    row.replace(0, r.metric.size(), v.name);
    table << row << '\n';
  }
  std::cout << table.str();
  write_file((fs::path(base.out) / "ablation.txt").string(), table.str());
  return 0;
}

void add_data_flags(CLI::App* cmd, DataFlags& d) {
  cmd->add_option("--synthetic", d.synthetic, "Synthetic suite file (JSON)");
  cmd->add_option("--manifest", d.manifest, "JSON-lines manifest with train/test splits");
}

void add_train_flags(CLI::App* cmd, TrainFlags& t) {
  cmd->add_option("--loss", t.loss, "mmd_nca | triplet | contrastive | nca | n_pair");
  cmd->add_option("--margin", t.margin, "Margin for triplet / contrastive");
  cmd->add_option("--updates", t.updates, "Total parameter updates");
  cmd->add_option("--lr", t.lr, "Initial learning rate");
  cmd->add_option("--set", t.sets, "Override any config field, e.g. --set encoder.hidden=64");
  cmd->add_flag("--quiet", t.quiet, "No progress lines on stderr");
}

void add_eval_flags(CLI::App* cmd, EvalFlags& e) {
  cmd->add_option("--metrics", e.metrics, "Comma-separated: learned,l2,dtw");
  cmd->add_option("--tpr-levels", e.tpr_levels, "Comma-separated TPR levels, percent or fraction");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"seqmetric: sequence metric learning with an attention-pooled BiLSTM"};
  app.require_subcommand(1);
  GlobalFlags g;
  app.add_option("--config", g.config, "Run config JSON; flags override it")->check(CLI::ExistingFile);
  app.add_option("--profile", g.profile, "paper | desk");
  app.add_option("--seed", g.seed, "Seed for data generation, init and sampling");
  app.add_option("--out", g.out, "Output directory");
  app.fallthrough();

  DataFlags data;
  TrainFlags train_flags;
  EvalFlags eval_flags;
  std::string run_dir, split = "test", file, query;
  std::size_t k = 4;
  bool attention = false;

  auto* train = app.add_subcommand("train", "Train an encoder; writes config, log and checkpoint");
  add_data_flags(train, data);
  add_train_flags(train, train_flags);

  auto* eval = app.add_subcommand("eval", "Evaluate a trained run on its test split");
  eval->add_option("--run", run_dir, "Run directory from train")->required();
  add_data_flags(eval, data);
  add_eval_flags(eval, eval_flags);
  eval->add_flag("--attention", attention, "Also export attention traces");

  auto* embed_cmd = app.add_subcommand("embed", "Write one embedding per sequence");
  embed_cmd->add_option("--run", run_dir, "Run directory from train")->required();
  add_data_flags(embed_cmd, data);
  embed_cmd->add_option("--split", split, "train | test | all");
  embed_cmd->add_option("--file", file, "Output JSON-lines file");

  auto* retrieve_cmd = app.add_subcommand("retrieve", "Nearest test-split neighbours of one sequence");
  retrieve_cmd->add_option("--run", run_dir, "Run directory from train")->required();
  add_data_flags(retrieve_cmd, data);
  retrieve_cmd->add_option("--query", query, "Source id of the query sequence")->required();
  retrieve_cmd->add_option("--k", k, "Neighbours to list");

  auto* ablate = app.add_subcommand("ablate", "Train and evaluate the full model and four variants");
  add_data_flags(ablate, data);
  add_train_flags(ablate, train_flags);
  add_eval_flags(ablate, eval_flags);

  CLI11_PARSE(app, argc, argv);
  try {
    if (*train) return cmd_train(g, data, train_flags);
    if (*eval) return cmd_eval(g, data, eval_flags, run_dir, attention);
    if (*embed_cmd) return cmd_embed(g, data, run_dir, split, file);
    if (*retrieve_cmd) return cmd_retrieve(g, data, run_dir, query, k);
    if (*ablate) return cmd_ablate(g, data, train_flags, eval_flags);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
