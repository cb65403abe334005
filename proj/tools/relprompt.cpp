// relprompt command-line interface over the C API.

#include <relprompt/relprompt.h>

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitFailure = 2;

struct Failure {
  int code;
};

/// Owns a string handed out by the library.
struct Owned {
  char* text = nullptr;
  ~Owned() { rp_string_free(text); }
  std::string str() const { return text ? text : ""; }
};

void check(rp_status status) {
  if (status == RP_OK) return;
  std::cerr << "error: " << rp_last_error() << '\n';
  throw Failure{status == RP_ERROR_USAGE ? kExitUsage : kExitFailure};
}

std::string digest(const std::string& path) {
  Owned hex;
  check(rp_file_digest(path.c_str(), &hex.text));
  return hex.str();
}

struct Manifest {
  std::string command;
  json config = json::object();
  std::optional<std::uint64_t> seed;
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;
};

/// `<primary>.manifest.json`: config snapshot, seed, version and the SHA-256
/// of every input and output. No timestamps, so identical runs produce
/// identical manifests.
void write_manifest(const Manifest& m, const std::string& primary, unsigned workers) {
  json inputs = json::object();
  for (const auto& p : m.inputs) inputs[p] = digest(p);
  json outputs = json::object();
  for (const auto& p : m.outputs) outputs[p] = digest(p);
  const json doc = {{"tool", "relprompt"},
                    {"version", rp_version()},
                    {"command", m.command},
                    {"seed", m.seed ? json(*m.seed) : json(nullptr)},
                    {"workers", workers},
                    {"config", m.config},
                    {"inputs", inputs},
                    {"outputs", outputs}};
  const auto path = primary + ".manifest.json";
  std::ofstream out(path, std::ios::binary);
  out << doc.dump(2) << '\n';
  if (!out) {
    std::cerr << "error: cannot write '" << path << "'\n";
    throw Failure{kExitFailure};
  }
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) {
    std::cerr << "error: cannot write '" << path << "'\n";
    throw Failure{kExitFailure};
  }
}

std::optional<std::uint64_t> env_seed() {
  const char* text = std::getenv("RELPROMPT_SEED");
  if (!text || !*text) return std::nullopt;
  try {
    std::size_t used = 0;
    const auto value = std::stoull(text, &used);
    if (used == std::string(text).size()) return value;
  } catch (const std::exception&) {
  }
  std::cerr << "error: RELPROMPT_SEED must be a non-negative integer\n";
  throw Failure{kExitUsage};
}

/// Defaults, then the --config file, then flags; the seed falls back to
/// RELPROMPT_SEED when neither the file nor --seed sets one.
struct Settings {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  unsigned workers = 1;
  json config;

  void load() {
    Owned text;
    check(rp_load_config(config_path.empty() ? nullptr : config_path.c_str(), &text.text));
    config = json::parse(text.str());
    if (seed) {
      config["seed"] = *seed;
    } else if (config["seed"].is_null()) {
      if (const auto s = env_seed()) config["seed"] = *s;
    }
    if (!config["seed"].is_null()) {
      const auto s = config["seed"].get<std::uint64_t>();
      config["corpus"]["seed"] = s;
      config["pretrain"]["seed"] = s;
      config["finetune"]["seed"] = s;
      config["eval"]["base_seed"] = s;
    }
  }

  std::optional<std::uint64_t> effective_seed() const {
    if (config["seed"].is_null()) return std::nullopt;
    return config["seed"].get<std::uint64_t>();
  }
};

template <typename T>
void set_if(json& section, const char* key, const std::optional<T>& value) {
  if (value) section[key] = *value;
}

std::string usage_hint(const CLI::App& app) { return app.help("", CLI::AppFormatMode::Normal); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Few-shot intent detection with relation-aware prompts", "relprompt"};
  app.set_version_flag("--version", std::string(rp_version()));
  app.require_subcommand(1);
  app.fallthrough();

  Settings settings;
  app.add_option("--config", settings.config_path, "Configuration file (sectioned key-value or .json)")
      ->check(CLI::ExistingFile);
  app.add_option("--seed", settings.seed, "Global seed for every stage (default: config, then RELPROMPT_SEED)");
  app.add_option("--workers", settings.workers, "Worker threads (1 = deterministic single-worker mode)")
      ->check(CLI::Range(1u, 1u << 10));

  // gen-corpus
  auto* gen = app.add_subcommand("gen-corpus", "Write the synthetic session, labeled and schema files");
  std::string gen_dir;
  std::optional<std::size_t> gen_sessions, gen_intents, gen_per_intent;
  gen->add_option("--out-dir", gen_dir, "Output directory")->required();
  gen->add_option("--num-sessions", gen_sessions, "Number of sessions");
  gen->add_option("--num-intents", gen_intents, "Number of intents");
  gen->add_option("--labeled-per-intent", gen_per_intent, "Labeled queries per intent");

  // build-vocab
  auto* vocab_cmd = app.add_subcommand("build-vocab", "Build the token vocabulary");
  std::string vb_sessions, vb_schema, vb_out;
  std::optional<std::size_t> vb_max, vb_min;
  vocab_cmd->add_option("--sessions", vb_sessions, "Session file (JSON lines)")->required()->check(CLI::ExistingFile);
  vocab_cmd->add_option("--schema", vb_schema, "Intent schema; its names join the vocabulary")
      ->check(CLI::ExistingFile);
  vocab_cmd->add_option("--out", vb_out, "Vocabulary file")->required();
  vocab_cmd->add_option("--max-size", vb_max, "Maximum size including special tokens");
  vocab_cmd->add_option("--min-freq", vb_min, "Minimum token frequency");

  // pretrain
  auto* pre = app.add_subcommand("pretrain", "Structure-aware masked language model pretraining");
  std::string pt_sessions, pt_vocab, pt_out, pt_log;
  std::optional<std::size_t> pt_epochs, pt_batch;
  std::optional<double> pt_lr, pt_mask;
  bool pt_no_qq = false, pt_no_qa = false, pt_text_only = false;
  pre->add_option("--sessions", pt_sessions, "Session file")->required()->check(CLI::ExistingFile);
  pre->add_option("--vocab", pt_vocab, "Vocabulary file")->required()->check(CLI::ExistingFile);
  pre->add_option("--out", pt_out, "Checkpoint file")->required();
  pre->add_option("--log", pt_log, "Per-epoch loss log (JSON lines)");
  pre->add_option("--epochs", pt_epochs, "Epochs");
  pre->add_option("--batch-size", pt_batch, "Prompts per step");
  pre->add_option("--lr", pt_lr, "Learning rate");
  pre->add_option("--mask-ratio", pt_mask, "Fraction of text tokens masked");
  pre->add_flag("--no-qq", pt_no_qq, "Drop query-query prompts");
  pre->add_flag("--no-qa", pt_no_qa, "Drop query-answer prompts");
  pre->add_flag("--text-only", pt_text_only, "Bare [CLS] q [SEP] prompts without relations");

  // finetune
  auto* ft = app.add_subcommand("finetune", "Few-shot fine-tuning with prompt learning");
  std::string ft_ckpt, ft_labeled, ft_schema, ft_out, ft_summary, ft_strategy;
  unsigned ft_shots = 0;
  std::vector<double> ft_grid;
  std::optional<std::size_t> ft_epochs, ft_patience, ft_batch;
  bool ft_freeze = false, ft_no_plft = false;
  ft->add_option("--checkpoint", ft_ckpt, "Pretrained checkpoint")->required()->check(CLI::ExistingFile);
  ft->add_option("--labeled", ft_labeled, "Labeled queries (JSON lines)")->required()->check(CLI::ExistingFile);
  ft->add_option("--schema", ft_schema, "Intent schema")->required()->check(CLI::ExistingFile);
  ft->add_option("--shots", ft_shots, "Training queries per intent")->required()->check(CLI::PositiveNumber);
  ft->add_option("--out", ft_out, "Fine-tuned model file")->required();
  ft->add_option("--summary", ft_summary, "Write the grid and test metrics as JSON");
  ft->add_option("--strategy", ft_strategy, "said, linear, mlp or queryadapt")
      ->check(CLI::IsMember({"said", "linear", "mlp", "queryadapt"}));
  ft->add_option("--lr", ft_grid, "Learning-rate grid (repeatable)");
  ft->add_option("--epochs", ft_epochs, "Maximum epochs per grid point");
  ft->add_option("--patience", ft_patience, "Early-stopping patience in epochs");
  ft->add_option("--batch-size", ft_batch, "Queries per step");
  ft->add_flag("--freeze-encoder", ft_freeze, "Train only the prompt tokens and heads");
  ft->add_flag("--no-prompt-learning", ft_no_plft, "Linear head over [CLS] q [SEP] instead of intent prompts");

  // predict
  auto* pred = app.add_subcommand("predict", "Classify queries with a fine-tuned model");
  std::string pr_model, pr_input, pr_out;
  std::vector<std::string> pr_queries;
  pred->add_option("--model", pr_model, "Fine-tuned model file")->required()->check(CLI::ExistingFile);
  pred->add_option("--query", pr_queries, "Query text (repeatable)");
  pred->add_option("--input", pr_input, "File with one query per line")->check(CLI::ExistingFile);
  pred->add_option("--out", pr_out, "Write JSON lines here instead of stdout");

  // eval
  auto* ev = app.add_subcommand("eval", "Run the variant x shots experiment matrix");
  std::string ev_out, ev_sessions, ev_labeled, ev_schema;
  std::vector<std::size_t> ev_shots;
  std::vector<std::string> ev_variants;
  std::optional<std::size_t> ev_runs;
  bool ev_quiet = false;
  ev->add_option("--out", ev_out, "Report file (timings go to <out>.timing.json)")->required();
  ev->add_option("--sessions", ev_sessions, "Session file (default: synthetic corpus)")->check(CLI::ExistingFile);
  ev->add_option("--labeled", ev_labeled, "Labeled queries")->check(CLI::ExistingFile);
  ev->add_option("--schema", ev_schema, "Intent schema")->check(CLI::ExistingFile);
  ev->add_option("--shots", ev_shots, "Shot settings")->delimiter(',');
  ev->add_option("--variants", ev_variants, "Variant keys")->delimiter(',');
  ev->add_option("--runs", ev_runs, "Seeded runs per cell");
  ev->add_flag("--quiet", ev_quiet, "No progress on stderr");

  // inspect-prompt
  auto* insp = app.add_subcommand("inspect-prompt", "Print the prompt layout for a query");
  std::string ip_query, ip_intent, ip_partner, ip_vocab, ip_relation = "qq";
  std::optional<std::size_t> ip_m, ip_max_len;
  bool ip_pad = false;
  insp->add_option("--query", ip_query, "Query text")->required();
  auto* ip_intent_opt = insp->add_option("--intent", ip_intent, "Intent name (query-intent prompt)");
  auto* ip_partner_opt = insp->add_option("--partner", ip_partner, "Partner text (relation prompt)");
  ip_intent_opt->excludes(ip_partner_opt);
  insp->add_option("--relation", ip_relation, "qq or qa, with --partner")->check(CLI::IsMember({"qq", "qa"}));
  insp->add_option("--m", ip_m, "Relation tokens");
  insp->add_option("--max-len", ip_max_len, "Sequence length");
  insp->add_option("--vocab", ip_vocab, "Vocabulary file (default: built from the given texts)")
      ->check(CLI::ExistingFile);
  insp->add_flag("--show-pad", ip_pad, "Include trailing padding");

  if (argc < 2) {
    std::cerr << usage_hint(app);
    return kExitUsage;
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << usage_hint(app);
    return kExitUsage;
  }

  try {
    settings.load();
    json& cfg = settings.config;
    Manifest manifest;
    manifest.seed = settings.effective_seed();

    if (*gen) {
      auto& c = cfg["corpus"];
      set_if(c, "num_sessions", gen_sessions);
      set_if(c, "num_intents", gen_intents);
      set_if(c, "labeled_per_intent", gen_per_intent);
      fs::create_directories(gen_dir);
      const auto base = fs::path(gen_dir);
      const auto sessions = (base / "sessions.jsonl").string();
      const auto labeled = (base / "labeled.jsonl").string();
      const auto schema = (base / "schema.json").string();
      check(rp_generate_corpus(c.dump().c_str(), sessions.c_str(), labeled.c_str(), schema.c_str()));
      manifest.command = "gen-corpus";
      manifest.config = {{"corpus", c}};
      manifest.outputs = {sessions, labeled, schema};
      write_manifest(manifest, (base / "corpus").string(), settings.workers);
    } else if (*vocab_cmd) {
      auto& c = cfg["tokenizer"];
      set_if(c, "max_size", vb_max);
      set_if(c, "min_freq", vb_min);
      check(rp_build_vocab(vb_sessions.c_str(), vb_schema.empty() ? nullptr : vb_schema.c_str(), c.dump().c_str(),
                           vb_out.c_str()));
      manifest.command = "build-vocab";
      manifest.config = {{"tokenizer", c}};
      manifest.inputs = {vb_sessions};
      if (!vb_schema.empty()) manifest.inputs.push_back(vb_schema);
      manifest.outputs = {vb_out};
      write_manifest(manifest, vb_out, settings.workers);
    } else if (*pre) {
      auto& c = cfg["pretrain"];
      set_if(c, "epochs", pt_epochs);
      set_if(c, "batch_size", pt_batch);
      set_if(c, "learning_rate", pt_lr);
      set_if(c, "mask_ratio", pt_mask);
      if (pt_no_qq) c["use_query_query"] = false;
      if (pt_no_qa) c["use_query_answer"] = false;
      if (pt_text_only) c["text_only"] = true;
      check(rp_pretrain(pt_sessions.c_str(), pt_vocab.c_str(), cfg["model"].dump().c_str(), c.dump().c_str(),
                        pt_out.c_str(), pt_log.empty() ? nullptr : pt_log.c_str()));
      manifest.command = "pretrain";
      manifest.config = {{"model", cfg["model"]}, {"pretrain", c}};
      manifest.inputs = {pt_sessions, pt_vocab};
      manifest.outputs = {pt_out};
      write_manifest(manifest, pt_out, settings.workers);
    } else if (*ft) {
      auto& c = cfg["finetune"];
      if (!ft_strategy.empty()) c["strategy"] = ft_strategy;
      if (!ft_grid.empty()) c["learning_rate_grid"] = ft_grid;
      set_if(c, "max_epochs", ft_epochs);
      set_if(c, "patience", ft_patience);
      set_if(c, "batch_size", ft_batch);
      if (ft_freeze) c["freeze_encoder"] = true;
      if (ft_no_plft) c["prompt_learning"] = false;
      Owned summary;
      check(rp_finetune(ft_ckpt.c_str(), ft_labeled.c_str(), ft_schema.c_str(), ft_shots, c.dump().c_str(),
                        ft_out.c_str(), &summary.text));
      const auto parsed = json::parse(summary.str());
      std::cerr << "learning rate " << parsed["learning_rate"] << ", validation "
                << parsed["validation_accuracy"] << ", test accuracy " << parsed["test"]["accuracy"] << "%\n";
      manifest.command = "finetune";
      manifest.config = {{"finetune", c}, {"shots", ft_shots}};
      manifest.inputs = {ft_ckpt, ft_labeled, ft_schema};
      manifest.outputs = {ft_out};
      if (!ft_summary.empty()) {
        write_file(ft_summary, parsed.dump(2) + "\n");
        manifest.outputs.push_back(ft_summary);
      }
      write_manifest(manifest, ft_out, settings.workers);
    } else if (*pred) {
      std::vector<std::string> queries = pr_queries;
      if (!pr_input.empty()) {
        std::ifstream in(pr_input);
        for (std::string line; std::getline(in, line);) {
          if (!line.empty() && line.back() == '\r') line.pop_back();
          if (!line.empty()) queries.push_back(line);
        }
      }
      if (queries.empty()) {
        std::cerr << "error: give --query or --input\n";
        return kExitUsage;
      }
      rp_model* model = nullptr;
      check(rp_model_load(pr_model.c_str(), &model));
      std::string lines;
      for (const auto& q : queries) {
        Owned result;
        const auto status = rp_model_predict(model, q.c_str(), &result.text);
        if (status != RP_OK) rp_model_free(model);
        check(status);
        json row = json::parse(result.str());
        row["query"] = q;
        lines += row.dump() + "\n";
      }
      rp_model_free(model);
      if (pr_out.empty()) {
        std::cout << lines;
      } else {
        write_file(pr_out, lines);
        manifest.command = "predict";
        manifest.inputs = {pr_model};
        if (!pr_input.empty()) manifest.inputs.push_back(pr_input);
        manifest.config = {{"queries", pr_queries}};
        manifest.outputs = {pr_out};
        write_manifest(manifest, pr_out, settings.workers);
      }
    } else if (*ev) {
      auto& e = cfg["eval"];
      if (!ev_shots.empty()) e["shots"] = ev_shots;
      if (!ev_variants.empty()) e["variants"] = ev_variants;
      set_if(e, "runs", ev_runs);
      const auto opt = [](const std::string& s) { return s.empty() ? nullptr : s.c_str(); };
      check(rp_run_experiment(cfg.dump().c_str(), opt(ev_sessions), opt(ev_labeled), opt(ev_schema), ev_out.c_str(),
                              ev_quiet ? 0 : 1));
      manifest.command = "eval";
      manifest.config = cfg;
      for (const auto* p : {&ev_sessions, &ev_labeled, &ev_schema}) {
        if (!p->empty()) manifest.inputs.push_back(*p);
      }
      // The timing sidecar holds wall-clock numbers, so only the report is hashed.
      manifest.outputs = {ev_out};
      write_manifest(manifest, ev_out, settings.workers);
    } else if (*insp) {
      json request = {{"query", ip_query}, {"show_pad", ip_pad}};
      if (*ip_intent_opt) {
        request["intent"] = ip_intent;
      } else if (*ip_partner_opt) {
        request["partner"] = ip_partner;
        request["relation"] = ip_relation;
      } else {
        std::cerr << "error: give --intent or --partner\n";
        return kExitUsage;
      }
      request["m"] = ip_m ? *ip_m : cfg["model"]["relation_tokens"].get<std::size_t>();
      request["max_len"] = ip_max_len ? *ip_max_len : cfg["model"]["max_len"].get<std::size_t>();
      if (!ip_vocab.empty()) request["vocab"] = ip_vocab;
      Owned rendering;
      check(rp_inspect_prompt(request.dump().c_str(), &rendering.text));
      std::cout << rendering.str() << '\n';
    }
  } catch (const Failure& f) {
    return f.code;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return 0;
}
