// Command-line front end. Every subcommand is a thin shell around the
// library; all real behavior lives in src/ so it stays testable without
// spawning processes.

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "efoent/ast.hpp"
#include "efoent/checkpoint.hpp"
#include "efoent/errors.hpp"
#include "efoent/kg.hpp"
#include "efoent/model.hpp"
#include "efoent/oracle.hpp"
#include "efoent/sampler.hpp"
#include "efoent/templates.hpp"
#include "efoent/train.hpp"

namespace fs = std::filesystem;
using namespace efoent;

namespace {

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  out << content;
}

void write_triples_tsv(const std::string& path, const KnowledgeGraph& kg,
                       const std::vector<Triple>& triples) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  for (const Triple& t : triples) {
    out << kg.entities().name(t.head) << '\t' << kg.relations().name(t.relation) << '\t'
        << kg.entities().name(t.tail) << '\n';
  }
}

std::string join(const std::vector<std::string>& parts, char sep) {
  std::string out;
  for (size_t i = 0; i < parts.size(); ++i) {
    if (i) out += sep;
    out += parts[i];
  }
  return out;
}

// ---------------------------------------------------------------------------
// ingest

struct IngestOpts {
  std::vector<std::string> files;
};

void run_ingest(const IngestOpts& o) {
  KnowledgeGraph kg = load_triples(o.files);
  std::cout << "entities=" << kg.num_entities() << " relations=" << kg.num_relations()
            << " edges=" << kg.triples().size() << "\n";
}

// ---------------------------------------------------------------------------
// split

struct SplitOpts {
  std::vector<std::string> input;
  double train_frac = 0.8;
  double valid_frac = 0.1;
  double test_frac = 0.1;
  uint64_t seed = 0;
  std::string out_dir;
};

void run_split(const SplitOpts& o) {
  KnowledgeGraph all = load_triples(o.input);
  GraphSplit s = build_splits(all, o.train_frac, o.valid_frac, o.test_frac, o.seed);
  fs::create_directories(o.out_dir);
  // The three files hold disjoint edge sets; the loaders rebuild the nested
  // graphs by accumulation.
  auto delta = [](const KnowledgeGraph& big, const KnowledgeGraph& small) {
    std::vector<Triple> d;
    for (const Triple& t : big.triples())
      if (!small.contains(t)) d.push_back(t);
    return d;
  };
  const std::vector<Triple> valid_delta = delta(s.valid, s.train);
  const std::vector<Triple> test_delta = delta(s.test, s.valid);
  write_triples_tsv((fs::path(o.out_dir) / "train.tsv").string(), s.train, s.train.triples());
  write_triples_tsv((fs::path(o.out_dir) / "valid.tsv").string(), s.valid, valid_delta);
  write_triples_tsv((fs::path(o.out_dir) / "test.tsv").string(), s.test, test_delta);
  std::cout << "train=" << s.train.triples().size() << " valid=+" << valid_delta.size()
            << " test=+" << test_delta.size() << "\n";
}

// ---------------------------------------------------------------------------
// sample

struct SampleOpts {
  std::vector<std::string> input;
  double train_frac = 0.8;
  double valid_frac = 0.1;
  double test_frac = 0.1;
  uint64_t split_seed = 0;
  std::string train_file, valid_file, test_file;
  std::string profile = "desk";
  int train_per_type = 0;
  int eval_per_type = 0;
  int max_attempts = 0;
  bool exhaustive_1p = false;
  std::vector<std::string> types;
  uint64_t seed = 0;
  std::string out_dir;
  // set by the parser so profile defaults survive unless overridden
  bool has_train_per_type = false, has_eval_per_type = false, has_max_attempts = false,
       has_exhaustive = false;
};

void run_sample(const SampleOpts& o) {
  GraphSplit splits;
  std::string source;
  if (!o.input.empty()) {
    splits = build_splits(load_triples(o.input), o.train_frac, o.valid_frac, o.test_frac,
                          o.split_seed);
    source = join(o.input, ',');
  } else if (!o.train_file.empty() && !o.valid_file.empty() && !o.test_file.empty()) {
    splits = load_split_files(o.train_file, o.valid_file, o.test_file);
    source = o.train_file + "," + o.valid_file + "," + o.test_file;
  } else {
    throw UsageError("supply either --input or all three of --train/--valid/--test");
  }
  DatasetProfile profile =
      o.profile == "paper" ? DatasetProfile::paper() : DatasetProfile::desk();
  if (o.has_train_per_type) profile.train_per_type = o.train_per_type;
  if (o.has_eval_per_type) profile.eval_per_type = o.eval_per_type;
  if (o.has_max_attempts) profile.max_attempts = o.max_attempts;
  if (o.has_exhaustive) profile.exhaustive_1p = o.exhaustive_1p;
  if (!o.types.empty()) profile.type_filter = o.types;
  std::cout << build_dataset(splits, profile, o.seed, o.out_dir, source) << "\n";
}

// ---------------------------------------------------------------------------
// oracle

struct OracleOpts {
  std::vector<std::string> graph;
  std::string query;
  std::vector<std::string> bind;
  bool naive = false;
  bool names = false;
  uint64_t budget = kDefaultNaiveBudget;
};

Grounding parse_bindings(const std::vector<std::string>& entries, const KnowledgeGraph& kg) {
  Grounding g;
  for (const std::string& entry : entries) {
    const size_t eq = entry.find('=');
    if (eq == std::string::npos || eq == 0 || eq + 1 == entry.size()) {
      throw UsageError("binding '" + entry + "' is not of the form name=value");
    }
    const std::string name = entry.substr(0, eq);
    const std::string value = entry.substr(eq + 1);
    int32_t k = 0;
    auto [end, ec] = std::from_chars(name.data() + 1, name.data() + name.size(), k);
    if (name.size() < 2 || (name[0] != 's' && name[0] != 'r') || ec != std::errc() ||
        end != name.data() + name.size() || k <= 0) {
      throw UsageError("binding name '" + name + "' must be s<k> or r<k>");
    }
    if (name[0] == 's') {
      auto id = kg.entities().find(value);
      if (!id) throw DataError("unknown entity '" + value + "'");
      g.constants[k] = *id;
    } else {
      auto id = kg.relations().find(value);
      if (!id) throw DataError("unknown relation '" + value + "'");
      g.relations[k] = *id;
    }
  }
  return g;
}

void run_oracle(const OracleOpts& o) {
  KnowledgeGraph kg = load_triples(o.graph);
  QueryAst ast = parse_efo(o.query);
  if (!o.bind.empty() || !is_grounded(ast)) ast = ground(ast, parse_bindings(o.bind, kg));
  const std::vector<EntityId> answers =
      o.naive ? answer_set_naive(kg, ast, o.budget) : answer_set(kg, ast);
  for (EntityId e : answers) {
    if (o.names)
      std::cout << kg.entities().name(e) << "\n";
    else
      std::cout << e << "\n";
  }
}

// ---------------------------------------------------------------------------
// convert

struct ConvertOpts {
  std::string to;
  std::string query;
};

void run_convert(const ConvertOpts& o) {
  if (o.to == "lisp")
    std::cout << convert_to_lisp(parse_efo(o.query)) << "\n";
  else
    std::cout << serialize_efo(parse_lisp(o.query)) << "\n";
}

// ---------------------------------------------------------------------------
// train

struct TrainOpts {
  std::string data_dir;
  std::string out;
  std::string loss_log;
  int d_model = 400;
  int layers = 3;
  int heads = 8;
  int ffn_mult = 4;
  int max_seq_len = 0;
  std::string pe = "logirpe";
  std::string pooling = "sum";
  bool no_mask = false;
  double dropout = 0.1;
  double lr = 1e-4;
  double smoothing = 0.1;
  int64_t steps = 0;
  int64_t warmup = 1000;
  int64_t validate_every = 0;
  int batch = 64;
  uint64_t seed = 0;
  int threads = 1;
  std::string precision = "f32";
  std::string frozen;
  std::vector<std::string> graph;
};

template <class S>
void run_train_typed(const TrainOpts& o) {
  const std::string manifest_path = (fs::path(o.data_dir) / "manifest.json").string();
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(read_file(manifest_path));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(manifest_path + ": " + e.what());
  }
  int32_t n_entities = 0, n_relations = 0;
  try {
    n_entities = manifest.at("graph").at("entities").get<int32_t>();
    n_relations = manifest.at("graph").at("relations").get<int32_t>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(manifest_path + ": " + e.what());
  }

  std::vector<QueryInstance> data = load_instances((fs::path(o.data_dir) / "train.jsonl").string());
  std::vector<QueryInstance> valid;
  if (o.validate_every > 0)
    valid = load_instances((fs::path(o.data_dir) / "valid.jsonl").string());

  ModelConfig mc;
  mc.d_model = o.d_model;
  mc.n_layers = o.layers;
  mc.n_heads = o.heads;
  mc.ffn_mult = o.ffn_mult;
  mc.max_seq_len = o.max_seq_len;
  mc.pe_kind = parse_pe_kind(o.pe);
  mc.pooling = parse_pooling(o.pooling);
  mc.use_adjacency_mask = !o.no_mask;
  mc.dropout = o.dropout;
  TokenVocab tv{n_entities, n_relations, max_template_existentials()};
  Model<S> model(mc, tv, o.seed);

  if (!o.frozen.empty()) {
    if (o.graph.empty())
      throw UsageError("--frozen-embeddings needs --graph to map symbol names to rows");
    model.load_frozen_embeddings(TensorFile::load(o.frozen), load_triples(o.graph));
  }

  TrainConfig tc;
  tc.base_lr = o.lr;
  tc.warmup = o.warmup;
  tc.label_smoothing = o.smoothing;
  tc.batch_size = o.batch;
  tc.max_steps = o.steps;
  tc.seed = o.seed;
  tc.validate_every = o.validate_every;
  tc.threads = o.threads;

  const std::string out_path =
      o.out.empty() ? (fs::path(o.data_dir) / "model.ckpt").string() : o.out;
  const std::string log_path = o.loss_log.empty() ? out_path + ".loss" : o.loss_log;
  std::ofstream log(log_path, std::ios::binary);
  if (!log) throw DataError("cannot write " + log_path);

  TrainResult<S> r =
      train_model(model, data, tc, log, valid.empty() ? nullptr : &valid, &std::cout);
  model.save_checkpoint(out_path);
  std::cout << "steps=" << r.steps << " first_loss=" << r.first_loss
            << " last_loss=" << r.last_loss << "\n";
  std::cout << "wrote " << out_path << "\n";
}

void run_train(const TrainOpts& o) {
  if (o.precision == "f64")
    run_train_typed<double>(o);
  else
    run_train_typed<float>(o);
}

// ---------------------------------------------------------------------------
// eval

struct EvalOpts {
  std::string model_path;
  std::string data_dir;
  std::string split = "test";
  std::string name;
  std::string out;
  int threads = 1;
};

template <class S>
EvalReport run_eval_typed(const EvalOpts& o, const std::vector<QueryInstance>& queries) {
  Model<S> model = Model<S>::load_checkpoint(o.model_path);
  return mrr_evaluate(model, queries, o.threads);
}

void run_eval(const EvalOpts& o) {
  const std::vector<QueryInstance> queries =
      load_instances((fs::path(o.data_dir) / (o.split + ".jsonl")).string());
  // Precision travels with the checkpoint so a caller never has to remember
  // what the model was trained with.
  const TensorFile header = TensorFile::load(o.model_path);
  const std::string precision = header.has_meta("precision") ? header.meta("precision") : "f32";
  EvalReport report = precision == "f64" ? run_eval_typed<double>(o, queries)
                                         : run_eval_typed<float>(o, queries);
  report.model_name = o.name.empty() ? fs::path(o.model_path).stem().string() : o.name;
  report.meta["data"] = o.data_dir;
  report.meta["split"] = o.split;
  if (o.out.empty()) {
    std::cout << report.to_json();
  } else {
    write_file(o.out, report.to_json());
    std::cout << "wrote " << o.out << "\n";
  }
}

// ---------------------------------------------------------------------------
// report

struct ReportOpts {
  std::vector<std::string> files;
  bool per_type = false;
  std::string svg;
};

void run_report(const ReportOpts& o) {
  std::vector<EvalReport> reports;
  reports.reserve(o.files.size());
  for (const std::string& f : o.files) {
    try {
      reports.push_back(EvalReport::from_json(read_file(f)));
    } catch (const DataError& e) {
      throw DataError(f + ": " + e.what());
    }
  }
  std::cout << report_table(reports);
  if (o.per_type) {
    for (const EvalReport& r : reports) {
      std::cout << "\n" << r.model_name << "\n" << report_per_type(r);
    }
  }
  if (!o.svg.empty()) {
    write_file(o.svg, report_svg(reports));
    std::cout << "wrote " << o.svg << "\n";
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"workbench for first-order entailment over knowledge graphs"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "efoent 0.1.0");
  app.set_config("--config", "", "INI file supplying long-option defaults")
      ->envname("EFOENT_CONFIG");

  IngestOpts ingest_opts;
  auto* ingest = app.add_subcommand("ingest", "index triple files and print graph statistics");
  ingest->add_option("files", ingest_opts.files, "tab-separated triple files")
      ->required()
      ->check(CLI::ExistingFile);
  ingest->callback([&] { run_ingest(ingest_opts); });

  SplitOpts split_opts;
  auto* split_cmd = app.add_subcommand("split", "cut one graph into nested train/valid/test files");
  split_cmd->add_option("--input", split_opts.input, "triple files of the full graph")
      ->required()
      ->check(CLI::ExistingFile);
  split_cmd->add_option("--train-frac", split_opts.train_frac, "training fraction of the edges");
  split_cmd->add_option("--valid-frac", split_opts.valid_frac, "extra fraction visible at validation");
  split_cmd->add_option("--test-frac", split_opts.test_frac, "extra fraction visible at test");
  split_cmd->add_option("--seed", split_opts.seed, "shuffle seed")->envname("EFOENT_SEED");
  split_cmd->add_option("--out-dir", split_opts.out_dir, "directory for the three edge files")
      ->required();
  split_cmd->callback([&] { run_split(split_opts); });

  SampleOpts sample_opts;
  auto* sample = app.add_subcommand("sample", "ground query templates into a dataset");
  sample->add_option("--input", sample_opts.input,
                     "whole-graph triple files (split in process)")
      ->check(CLI::ExistingFile);
  sample->add_option("--train-frac", sample_opts.train_frac, "training fraction when splitting");
  sample->add_option("--valid-frac", sample_opts.valid_frac, "validation fraction when splitting");
  sample->add_option("--test-frac", sample_opts.test_frac, "test fraction when splitting");
  sample->add_option("--split-seed", sample_opts.split_seed, "shuffle seed when splitting");
  sample->add_option("--train", sample_opts.train_file, "training edge file")
      ->check(CLI::ExistingFile);
  sample->add_option("--valid", sample_opts.valid_file, "validation delta edge file")
      ->check(CLI::ExistingFile);
  sample->add_option("--test", sample_opts.test_file, "test delta edge file")
      ->check(CLI::ExistingFile);
  sample->add_option("--profile", sample_opts.profile, "sampling profile")
      ->check(CLI::IsMember({"desk", "paper"}))
      ->envname("EFOENT_PROFILE");
  auto* tpt = sample->add_option("--train-per-type", sample_opts.train_per_type,
                                 "training samples per seen type (negative: twice the 1p count)");
  auto* ept = sample->add_option("--eval-per-type", sample_opts.eval_per_type,
                                 "evaluation samples per type and split");
  auto* mat = sample->add_option("--max-attempts", sample_opts.max_attempts,
                                 "resampling budget per query");
  auto* exh = sample->add_flag("--exhaustive-1p,!--no-exhaustive-1p", sample_opts.exhaustive_1p,
                               "enumerate every training 1p query instead of sampling");
  sample->add_option("--types", sample_opts.types, "restrict to these query types")
      ->delimiter(',');
  sample->add_option("--seed", sample_opts.seed, "sampling seed")->envname("EFOENT_SEED");
  sample->add_option("--out", sample_opts.out_dir, "output dataset directory")->required();
  sample->callback([&] {
    sample_opts.has_train_per_type = tpt->count() > 0;
    sample_opts.has_eval_per_type = ept->count() > 0;
    sample_opts.has_max_attempts = mat->count() > 0;
    sample_opts.has_exhaustive = exh->count() > 0;
    run_sample(sample_opts);
  });

  OracleOpts oracle_opts;
  auto* oracle = app.add_subcommand("oracle", "compute the exact answer set of a query");
  oracle->add_option("--graph", oracle_opts.graph, "triple files of the graph to query")
      ->required()
      ->check(CLI::ExistingFile);
  oracle->add_option("--query", oracle_opts.query, "query text")->required();
  oracle->add_option("--bind", oracle_opts.bind,
                     "placeholder bindings, e.g. s1=alice,r1=likes")
      ->delimiter(',');
  oracle->add_flag("--naive", oracle_opts.naive, "use the brute-force reference evaluator");
  oracle->add_flag("--names", oracle_opts.names, "print entity names instead of ids");
  oracle->add_option("--budget", oracle_opts.budget,
                     "assignment budget for the brute-force evaluator");
  oracle->callback([&] { run_oracle(oracle_opts); });

  ConvertOpts convert_opts;
  auto* convert = app.add_subcommand("convert", "translate between query syntaxes");
  convert->add_option("--to", convert_opts.to, "target syntax")
      ->required()
      ->check(CLI::IsMember({"lisp", "efo"}));
  convert->add_option("--query", convert_opts.query, "query text")->required();
  convert->callback([&] { run_convert(convert_opts); });

  TrainOpts train_opts;
  auto* train = app.add_subcommand("train", "fit an encoder on a sampled dataset");
  train->add_option("--data", train_opts.data_dir, "dataset directory from `sample`")
      ->required()
      ->check(CLI::ExistingDirectory);
  train->add_option("--out", train_opts.out, "checkpoint path (default <data>/model.ckpt)");
  train->add_option("--loss-log", train_opts.loss_log,
                    "per-step loss file (default <out>.loss)");
  train->add_option("--d-model", train_opts.d_model, "model width");
  train->add_option("--layers", train_opts.layers, "encoder layers");
  train->add_option("--heads", train_opts.heads, "attention heads");
  train->add_option("--ffn-mult", train_opts.ffn_mult, "feed-forward width multiplier");
  train->add_option("--max-seq-len", train_opts.max_seq_len,
                    "positional range (0: longest template)");
  train->add_option("--pe", train_opts.pe, "positional encoding")
      ->check(CLI::IsMember({"absolute", "relative", "logirpe"}));
  train->add_option("--pooling", train_opts.pooling, "free-variable pooling")
      ->check(CLI::IsMember({"sum", "mean", "max"}));
  train->add_flag("--no-mask", train_opts.no_mask, "disable the query-graph attention mask");
  train->add_option("--dropout", train_opts.dropout, "dropout probability");
  train->add_option("--lr", train_opts.lr, "base learning rate");
  train->add_option("--smoothing", train_opts.smoothing, "label smoothing mass");
  train->add_option("--steps", train_opts.steps, "optimization steps")->required();
  train->add_option("--warmup", train_opts.warmup, "linear warmup steps");
  train->add_option("--validate-every", train_opts.validate_every,
                    "validation cadence in steps (0: off)");
  train->add_option("--batch", train_opts.batch, "batch size");
  train->add_option("--seed", train_opts.seed, "initialization and shuffling seed")
      ->envname("EFOENT_SEED");
  train->add_option("--threads", train_opts.threads, "worker cap for per-sample tapes")
      ->envname("EFOENT_THREADS");
  train->add_option("--precision", train_opts.precision, "parameter scalar type")
      ->check(CLI::IsMember({"f32", "f64"}))
      ->envname("EFOENT_PRECISION");
  train->add_option("--frozen-embeddings", train_opts.frozen,
                    "embedding file whose rows stay fixed during training")
      ->check(CLI::ExistingFile);
  train->add_option("--graph", train_opts.graph,
                    "triple files naming the rows of --frozen-embeddings")
      ->check(CLI::ExistingFile);
  train->callback([&] { run_train(train_opts); });

  EvalOpts eval_opts;
  auto* eval = app.add_subcommand("eval", "rank answers and aggregate MRR cells");
  eval->add_option("--model", eval_opts.model_path, "checkpoint to evaluate")
      ->required()
      ->check(CLI::ExistingFile);
  eval->add_option("--data", eval_opts.data_dir, "dataset directory from `sample`")
      ->required()
      ->check(CLI::ExistingDirectory);
  eval->add_option("--split", eval_opts.split, "dataset file to evaluate")
      ->check(CLI::IsMember({"train", "valid", "test"}));
  eval->add_option("--name", eval_opts.name, "row label (default checkpoint stem)");
  eval->add_option("--out", eval_opts.out, "report JSON path (default stdout)");
  eval->add_option("--threads", eval_opts.threads, "worker cap for query scoring")
      ->envname("EFOENT_THREADS");
  eval->callback([&] { run_eval(eval_opts); });

  ReportOpts report_opts;
  auto* report = app.add_subcommand("report", "render evaluation reports");
  report->add_option("files", report_opts.files, "report JSON files")
      ->required()
      ->check(CLI::ExistingFile);
  report->add_flag("--per-type", report_opts.per_type, "append per-type breakdown tables");
  report->add_option("--svg", report_opts.svg, "also draw a grouped bar chart to this path");
  report->callback([&] { run_report(report_opts); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    // budget and divergence failures land here with the runtime code
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
