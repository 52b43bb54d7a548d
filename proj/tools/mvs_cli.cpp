// Copyright 2026 the mvsearch authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// mvs: train, index, search, evaluate and synthesize from the command line.
//
// Exit codes: 0 success / match found, 1 nothing accepted, 2 usage or
// configuration error, 3 I/O or file format error.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "mvs/mvs.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr int kExitFound = 0;
constexpr int kExitNone = 1;
constexpr int kExitUsage = 2;
constexpr int kExitIo = 3;

constexpr const char* kDescriptorExt = ".bfds";

/// Descriptor files directly inside `dir`, sorted by name.
std::vector<fs::path> descriptor_files(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw std::runtime_error("not a directory: " + dir.string());
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == kDescriptorExt) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

std::string manifest_path(const fs::path& engine) { return engine.string() + ".manifest.tsv"; }

/// id -> filename from the manifest beside an engine file; empty if absent.
std::map<std::uint32_t, std::string> read_manifest(const fs::path& engine) {
  std::map<std::uint32_t, std::string> out;
  std::ifstream in(manifest_path(engine));
  std::string line;
  while (std::getline(in, line)) {
    const auto tab = line.find('\t');
    if (tab == std::string::npos) continue;
    out[static_cast<std::uint32_t>(std::stoul(line.substr(0, tab)))] = line.substr(tab + 1);
  }
  return out;
}

std::string fmt(double v, int prec = 6) {
  std::ostringstream os;
  os << std::setprecision(prec) << v;
  return os.str();
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string descriptors;
  std::string out;
  std::size_t words = 1024;
  std::size_t substring_bits = 64;
  std::uint64_t seed = 0;
  std::size_t max_iterations = 25;
  double th_init = mvs::kDefaultThresholdInit;
  double th_step = mvs::kDefaultThresholdStep;
};

int cmd_train(const TrainArgs& a) {
  mvs::TrainingConfig tc;
  tc.n_words = a.words;
  tc.seed = a.seed;
  tc.max_iterations = a.max_iterations;
  tc.validate();

  std::vector<mvs::BinaryDescriptor> data;
  std::size_t d_bits = 0;
  for (const auto& p : descriptor_files(a.descriptors)) {
    const auto file = mvs::read_descriptor_file(p, d_bits);
    d_bits = file.info.d_bits;
    for (const auto& f : file.features) data.push_back(f.descriptor);
  }
  if (data.empty()) throw mvs::ConfigError("no training descriptors found in " + a.descriptors);
  if (a.substring_bits < 8 || a.substring_bits % 8 != 0 || a.substring_bits > d_bits) {
    throw mvs::ConfigError("--substring-bits must be a multiple of 8 in [8, " + std::to_string(d_bits) + "]");
  }

  auto vocab = mvs::train(data, tc);
  auto dict = mvs::build_dictionary(data, vocab, a.substring_bits, a.th_init, a.th_step);
  const mvs::EngineState state(std::move(vocab), std::move(dict));
  const auto bytes = mvs::save_engine(state);
  mvs::detail::write_file_bytes(a.out, bytes);

  std::cout << "training descriptors: " << data.size() << "\n"
            << "descriptor bits D: " << d_bits << "\n"
            << "words N: " << state.params().n_words << "\n"
            << "substring bits T: " << state.params().t_bits << "\n"
            << "bytes written: " << bytes.size() << "\n";
  return kExitFound;
}

// ---------------------------------------------------------------------------

struct IndexArgs {
  std::string engine;
  std::string descriptors;
  std::string out;
};

int cmd_index(const IndexArgs& a) {
  auto state = mvs::load_engine(fs::path(a.engine));
  const std::size_t d_bits = state.params().d_bits;
  const auto files = descriptor_files(a.descriptors);
  if (files.size() > mvs::kMaxImages) throw mvs::CapacityError("more than 65536 reference images");
  if (state.index().n_images() != 0) throw mvs::UsageError("engine already holds an index");

  std::ofstream manifest(manifest_path(a.out), std::ios::trunc);
  if (!manifest) throw std::runtime_error("cannot write " + manifest_path(a.out));
  std::size_t features = 0;
  for (std::size_t i = 0; i < files.size(); ++i) {
    const auto file = mvs::read_descriptor_file(files[i], d_bits);
    state.add_image(static_cast<std::uint32_t>(i), file.features);
    features += file.features.size();
    manifest << i << '\t' << files[i].filename().string() << '\n';
  }
  manifest.close();

  const auto layout = mvs::engine_layout(state);
  const auto bytes = mvs::save_engine(state);
  mvs::detail::write_file_bytes(a.out, bytes);

  const std::size_t per_entry = mvs::entry_bytes(state.params().t_bits);
  std::cout << "images: " << files.size() << "\n"
            << "features: " << features << "\n"
            << "bytes per feature entry: " << per_entry << "\n"
            << "posting payload bytes: " << per_entry * features << "\n"
            << "vocabulary bytes: " << layout.vocabulary << "\n"
            << "dictionary bytes: " << layout.dictionary << "\n"
            << "engine file bytes: " << bytes.size() << "\n"
            << "manifest: " << manifest_path(a.out) << "\n";
  return kExitFound;
}

// ---------------------------------------------------------------------------

struct PipelineArgs {
  std::string scoring = "lnm";
  std::size_t k = 2;
  double sigma = 9.0;
  std::size_t top_r = 3;
  std::string gv = "cc";
  std::size_t min_inliers = 12;
  std::size_t max_iterations = 2000;
  double inlier_px = 5.0;
  double dedup_px = 5.0;
  std::uint64_t seed = 0;
};

mvs::PipelineConfig pipeline_config(const PipelineArgs& a, mvs::Scheme scheme) {
  mvs::PipelineConfig pc;
  pc.scoring.scheme = scheme;
  pc.scoring.k_neighbors = a.k;
  pc.scoring.sigma = a.sigma;
  pc.scoring.validate();
  if (a.gv != "off") {
    mvs::GVConfig g;
    g.top_r = a.top_r;
    g.min_inliers = a.min_inliers;
    g.max_iterations = a.max_iterations;
    g.inlier_px = a.inlier_px;
    g.dedup_px = a.dedup_px;
    g.convexity_check = a.gv == "cc";
    g.seed = a.seed;
    g.validate();
    pc.gv = g;
  }
  return pc;
}

std::vector<mvs::Scheme> parse_scheme_list(const std::string& list) {
  std::vector<mvs::Scheme> out;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(mvs::parse_scheme(item));
  }
  if (out.empty()) throw mvs::UsageError("--scoring needs at least one scheme");
  return out;
}

struct SearchArgs {
  std::string engine;
  std::string query;
  std::size_t top = 10;
  bool json = false;
  PipelineArgs pipe;
};

json homography_json(const std::optional<mvs::Homography>& h) {
  if (!h) return nullptr;
  json m = json::array();
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) m.push_back((*h)(r, c));
  return m;
}

int cmd_search(const SearchArgs& a) {
  const auto pc = pipeline_config(a.pipe, mvs::parse_scheme(a.pipe.scoring));
  const auto state = mvs::load_engine(fs::path(a.engine));
  const auto query = mvs::read_descriptor_file(a.query, state.params().d_bits);
  const auto names = read_manifest(a.engine);
  const auto outcome = mvs::run_query(query.features, state, pc);

  const bool found = pc.gv ? outcome.any_accepted() : !outcome.ranking.empty();
  const std::size_t shown = std::min(a.top, outcome.ranking.size());
  auto name_of = [&](std::uint32_t id) {
    const auto it = names.find(id);
    return it == names.end() ? std::string() : it->second;
  };

  if (a.json) {
    json j;
    j["query"] = a.query;
    j["features"] = query.features.size();
    j["scoring"] = a.pipe.scoring;
    j["k"] = a.pipe.k;
    j["gv"] = a.pipe.gv;
    j["results"] = json::array();
    for (std::size_t i = 0; i < shown; ++i) {
      const auto& r = outcome.ranking[i];
      j["results"].push_back({{"rank", i + 1}, {"image_id", r.image_id}, {"score", r.score}, {"file", name_of(r.image_id)}});
    }
    j["verification"] = json::array();
    for (const auto& rep : outcome.reports) {
      j["verification"].push_back({{"image_id", rep.image_id},
                                   {"matches", rep.match_count},
                                   {"raw_inliers", rep.raw_inliers},
                                   {"deduped_inliers", rep.deduped_inliers},
                                   {"convex", rep.convex},
                                   {"final_score", rep.final_score},
                                   {"accepted", rep.accepted},
                                   {"homography", homography_json(rep.homography)}});
    }
    j["found"] = found;
    std::cout << j.dump(2) << "\n";
  } else {
    std::cout << "query: " << a.query << " (" << query.features.size() << " features)\n"
              << "scoring: " << a.pipe.scoring << "  k: " << a.pipe.k << "  gv: " << a.pipe.gv << "\n\n"
              << "rank\timage\tscore\tfile\n";
    for (std::size_t i = 0; i < shown; ++i) {
      const auto& r = outcome.ranking[i];
      std::cout << i + 1 << '\t' << r.image_id << '\t' << fmt(r.score) << '\t' << name_of(r.image_id) << '\n';
    }
    if (pc.gv) {
      std::cout << "\nimage\tmatches\tinliers\tdeduped\tconvex\tfinal\tverdict\n";
      for (const auto& rep : outcome.reports) {
        std::cout << rep.image_id << '\t' << rep.match_count << '\t' << rep.raw_inliers << '\t' << rep.deduped_inliers
                  << '\t' << (rep.homography ? (rep.convex ? "yes" : "no") : "-") << '\t' << rep.final_score << '\t'
                  << (rep.accepted ? "accept" : "reject") << '\n';
      }
    }
    if (!found) std::cout << "\nno match\n";
  }
  return found ? kExitFound : kExitNone;
}

// ---------------------------------------------------------------------------

struct EvalArgs {
  std::string engine;
  std::string queries;
  std::string gt;
  std::string report;
  PipelineArgs pipe;
};

int cmd_eval(const EvalArgs& a) {
  const auto schemes = parse_scheme_list(a.pipe.scoring);
  std::vector<mvs::PipelineConfig> configs;
  for (auto s : schemes) configs.push_back(pipeline_config(a.pipe, s));

  std::ifstream gt_in(a.gt);
  if (!gt_in) throw std::runtime_error("cannot open " + a.gt);
  const auto gt_lines = mvs::parse_ground_truth(gt_in);
  const fs::path gt_dir = fs::path(a.gt).parent_path();
  std::map<fs::path, std::optional<std::uint32_t>> truth;
  for (const auto& g : gt_lines) truth[fs::weakly_canonical(gt_dir / g.query_path)] = g.relevant;

  const auto state = mvs::load_engine(fs::path(a.engine));
  const auto files = descriptor_files(a.queries);
  if (files.empty()) throw mvs::UsageError("no query files in " + a.queries);
  std::vector<std::vector<mvs::Feature>> queries;
  std::vector<std::optional<std::uint32_t>> relevant;
  for (const auto& p : files) {
    const auto it = truth.find(fs::weakly_canonical(p));
    if (it == truth.end()) throw mvs::UsageError("missing ground truth for query " + p.string());
    if (it->second && *it->second >= state.index().n_images()) {
      throw mvs::UsageError("ground truth for " + p.string() + " names image " + std::to_string(*it->second) +
                            " but the index holds " + std::to_string(state.index().n_images()));
    }
    queries.push_back(mvs::read_descriptor_file(p, state.params().d_bits).features);
    relevant.push_back(it->second);
  }

  std::ofstream report(a.report, std::ios::trunc);
  std::ofstream summary(a.report + ".summary", std::ios::trunc);
  if (!report || !summary) throw std::runtime_error("cannot write report " + a.report);

  const bool with_gv = a.pipe.gv != "off";
  std::vector<std::pair<std::string, mvs::EvaluationSummary>> rows;
  for (std::size_t i = 0; i < schemes.size(); ++i) {
    const auto outcomes = mvs::run_queries(queries, state, configs[i]);
    rows.emplace_back(std::string(mvs::to_string(schemes[i])), mvs::summarize(outcomes, relevant, with_gv));
  }

  const auto& any = rows.front().second;
  report << "# retrieval evaluation\n"
         << "engine\t" << a.engine << "\n"
         << "queries\t" << any.true_queries << " true, " << any.distractors << " distractors\n"
         << "gv\t" << a.pipe.gv << "\n\n"
         << "## MAP\n"
         << "scoring\tmap\ttop1_recall\taccepted_distractors\tzero_fp_accuracy\n";
  for (const auto& [name, s] : rows) {
    report << name << '\t' << fmt(s.map) << '\t' << fmt(s.top1_recall) << '\t' << s.accepted_distractors << '\t'
           << (s.zero_fp ? fmt(*s.zero_fp) : "n/a") << '\n';
  }
  report << "\n## zero-FP accuracy\n";
  for (const auto& [name, s] : rows) report << name << '\t' << (s.zero_fp ? fmt(*s.zero_fp) : "n/a") << '\n';
  report << "\n## ROC\nscoring\tthreshold\ttpr\tfpr\n";
  for (const auto& [name, s] : rows) {
    for (const auto& p : s.roc) report << name << '\t' << fmt(p.threshold) << '\t' << fmt(p.tpr) << '\t' << fmt(p.fpr) << '\n';
  }
  report << "\n## median timings [s]\nscoring\tquantize\thamming_vote\tgv\ttotal\n";
  for (const auto& [name, s] : rows) {
    const auto& t = s.median_timings;
    report << name << '\t' << fmt(t.quantize_s) << '\t' << fmt(t.hamming_s) << '\t' << fmt(t.gv_s) << '\t'
           << fmt(t.total_s) << '\n';
  }

  summary << "true_queries=" << any.true_queries << "\n"
          << "distractors=" << any.distractors << "\n"
          << "gv=" << a.pipe.gv << "\n";
  for (const auto& [name, s] : rows) {
    summary << name << ".map=" << fmt(s.map, 17) << "\n"
            << name << ".top1_recall=" << fmt(s.top1_recall, 17) << "\n"
            << name << ".accepted_distractors=" << s.accepted_distractors << "\n"
            << name << ".zero_fp_accuracy=" << (s.zero_fp ? fmt(*s.zero_fp, 17) : "nan") << "\n"
            << name << ".roc_points=" << s.roc.size() << "\n"
            << name << ".median_total_s=" << fmt(s.median_timings.total_s, 17) << "\n";
  }

  std::cout << "scoring\tmap\ttop1_recall\taccepted_distractors\n";
  for (const auto& [name, s] : rows) {
    std::cout << name << '\t' << fmt(s.map) << '\t' << fmt(s.top1_recall) << '\t' << s.accepted_distractors << '\n';
  }
  std::cout << "report: " << a.report << "\nsummary: " << a.report << ".summary\n";
  return kExitFound;
}

// ---------------------------------------------------------------------------

struct SynthArgs {
  std::string out;
  std::size_t images = 100;
  std::size_t features = 900;
  double noise = 0.1;
  std::uint64_t seed = 0;
  std::optional<std::size_t> queries;
  std::size_t distractors = 0;
  std::size_t train_images = 0;
  std::string jitter = "on";
  double dropout = 0.0;
};

int cmd_synth(const SynthArgs& a) {
  mvs::SyntheticSceneConfig cfg;
  cfg.n_images = a.images;
  cfg.features_per_image = a.features;
  cfg.n_queries = a.queries.value_or(a.images);
  cfg.n_distractors = a.distractors;
  cfg.n_training_images = a.train_images;
  cfg.bit_flip_prob = a.noise;
  cfg.feature_dropout_prob = a.dropout;
  if (a.jitter == "off") cfg.jitter = mvs::HomographyJitter::none();
  cfg.seed = a.seed;
  cfg.validate();
  const auto scene = mvs::generate_synthetic(cfg);
  mvs::write_synthetic(scene, a.out, cfg.d_bits);
  std::cout << "references: " << scene.references.size() << "\n"
            << "true queries: " << cfg.n_queries << "\n"
            << "distractors: " << cfg.n_distractors << "\n"
            << "training images: " << scene.training.size() << "\n"
            << "ground truth: " << (fs::path(a.out) / "ground_truth.tsv").string() << "\n";
  return kExitFound;
}

void add_pipeline_options(CLI::App* cmd, PipelineArgs& p, bool scheme_list) {
  cmd->add_option("--scoring", p.scoring, scheme_list ? "Comma-separated schemes: tfidf,gw,lno,lnm" : "tfidf|gw|lno|lnm")
      ->capture_default_str();
  cmd->add_option("--k", p.k, "Neighbours per query feature")->capture_default_str()->check(CLI::PositiveNumber);
  cmd->add_option("--sigma", p.sigma, "Gaussian weighting sigma")->capture_default_str()->check(CLI::PositiveNumber);
  cmd->add_option("--top-r", p.top_r, "Candidates passed to verification")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  cmd->add_option("--gv", p.gv, "Geometric verification: off, on, or cc (with convexity check)")
      ->capture_default_str()
      ->check(CLI::IsMember({"off", "on", "cc"}));
  cmd->add_option("--min-inliers", p.min_inliers, "Acceptance threshold on the final score")->capture_default_str();
  cmd->add_option("--max-iterations", p.max_iterations, "Sampling iterations per candidate")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  cmd->add_option("--inlier-px", p.inlier_px, "Inlier transfer error [px]")->capture_default_str();
  cmd->add_option("--dedup-px", p.dedup_px, "Duplicate inlier radius [px]")->capture_default_str();
  cmd->add_option("--gv-seed", p.seed, "Sampling seed")->capture_default_str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Binary-descriptor visual search engine"};
  app.set_config("--config", "", "Read options from a key=value file");
  app.require_subcommand(1);

  TrainArgs train;
  auto* c_train = app.add_subcommand("train", "Train a vocabulary and substring dictionary");
  c_train->add_option("--descriptors", train.descriptors, "Directory of training descriptor files")->required();
  c_train->add_option("--words", train.words, "Vocabulary size N")->capture_default_str()->check(CLI::Range(2, 1 << 24));
  c_train->add_option("--substring-bits", train.substring_bits, "Substring length T")->capture_default_str();
  c_train->add_option("--seed", train.seed, "Training seed")->capture_default_str();
  c_train->add_option("--max-iterations", train.max_iterations, "k-means iteration cap")->capture_default_str();
  c_train->add_option("--th-init", train.th_init, "Initial correlation threshold")->capture_default_str();
  c_train->add_option("--th-step", train.th_step, "Threshold relaxation step")->capture_default_str();
  c_train->add_option("--out", train.out, "Engine file to write")->required();

  IndexArgs index;
  auto* c_index = app.add_subcommand("index", "Index reference images into a trained engine");
  c_index->add_option("--engine", index.engine, "Trained engine file")->required()->check(CLI::ExistingFile);
  c_index->add_option("--descriptors", index.descriptors, "Directory of reference descriptor files")->required();
  c_index->add_option("--out", index.out, "Indexed engine file to write")->required();

  SearchArgs search;
  auto* c_search = app.add_subcommand("search", "Search one query descriptor file");
  c_search->add_option("--engine", search.engine, "Indexed engine file")->required()->check(CLI::ExistingFile);
  c_search->add_option("--query", search.query, "Query descriptor file")->required()->check(CLI::ExistingFile);
  c_search->add_option("--top", search.top, "Results to print")->capture_default_str();
  c_search->add_flag("--json", search.json, "Machine-readable output");
  add_pipeline_options(c_search, search.pipe, false);

  EvalArgs eval;
  auto* c_eval = app.add_subcommand("eval", "Evaluate a query set against ground truth");
  c_eval->add_option("--engine", eval.engine, "Indexed engine file")->required()->check(CLI::ExistingFile);
  c_eval->add_option("--queries", eval.queries, "Directory of query descriptor files")->required();
  c_eval->add_option("--gt", eval.gt, "Ground-truth file")->required();
  c_eval->add_option("--report", eval.report, "Report file; a key=value summary goes to REPORT.summary")->required();
  add_pipeline_options(c_eval, eval.pipe, true);

  SynthArgs synth;
  auto* c_synth = app.add_subcommand("synth", "Generate a synthetic benchmark");
  c_synth->add_option("--out", synth.out, "Output directory")->required();
  c_synth->add_option("--images", synth.images, "Reference images")->capture_default_str();
  c_synth->add_option("--features", synth.features, "Features per image")->capture_default_str();
  c_synth->add_option("--noise", synth.noise, "Bit flip probability")->capture_default_str();
  c_synth->add_option("--seed", synth.seed, "Generator seed")->capture_default_str();
  c_synth->add_option("--queries", synth.queries, "True queries (default: one per image)");
  c_synth->add_option("--distractors", synth.distractors, "Distractor queries")->capture_default_str();
  c_synth->add_option("--train-images", synth.train_images, "Independent training images")->capture_default_str();
  c_synth->add_option("--jitter", synth.jitter, "Random homography per query: on or off")
      ->capture_default_str()
      ->check(CLI::IsMember({"on", "off"}));
  c_synth->add_option("--dropout", synth.dropout, "Feature dropout probability")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*c_train) return cmd_train(train);
    if (*c_index) return cmd_index(index);
    if (*c_search) return cmd_search(search);
    if (*c_eval) return cmd_eval(eval);
    if (*c_synth) return cmd_synth(synth);
  } catch (const mvs::FormatError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::invalid_argument& e) {  // UsageError, ConfigError
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::length_error& e) {  // CapacityError
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIo;
  }
  return kExitUsage;
}
