// Command-line front end: corpus synthesis, training, conversion, objective
// evaluation, and the tabular equilibrium verification. Plot-ready CSV out,
// no interactive UI. Exit codes: 0 success, 1 usage error, 2 numerical
// failure (non-finite loss or a verification tolerance breach).

#include <CLI11.hpp>
#include <cstdlib>
#include <functional>
#include <iostream>

#include "vclab/eval.hpp"
#include "vclab/theory.hpp"
#include "vclab/trainer.hpp"

namespace {

using namespace vclab;

Precision env_precision(Precision config_value) {
  const char* v = std::getenv("VCLAB_PRECISION");
  if (!v) return config_value;
  return precision_from_name(v);
}

struct SynthArgs {
  long domains = 4, dim = 8, utts = 20, frames = 64;
  std::uint64_t seed = 1;
  std::string out;
  std::string style = "gaussian-domains";
  double frame_shift_ms = 8.0;
  double noise_sigma = 0.25;
  double mean_scale = 2.0;
};

int run_synth(const SynthArgs& a) {
  ToyStyle style = toy_style_from_name(a.style);
  style.noise_sigma = a.noise_sigma;
  style.mean_scale = a.mean_scale;
  DomainCorpus corpus = synth_toy_corpus(a.domains, a.dim, a.utts, a.frames, a.seed, style);
  corpus.frame_shift_ms = a.frame_shift_ms;
  save_corpus(corpus, a.out);
  long files = 0;
  for (const auto& d : corpus.utterances) files += static_cast<long>(d.size());
  std::cout << "wrote " << files << " feature files across " << a.domains << " domains to "
            << a.out << "\n";
  return 0;
}

struct TrainArgs {
  std::string formulation;
  std::string config_path;
  std::string corpus;
  std::string out;
  std::string preset;
  std::string run_id = "run";
  long iters = -1;
  long batch = -1;
  long segment = -1;
  long checkpoint_interval = -1;
  std::int64_t seed = -1;
  int source = 0, target = 0;
  bool quiet = false;
};

TrainConfig build_train_config(const TrainArgs& a) {
  Formulation f = formulation_from_name(a.formulation);
  TrainConfig cfg;
  if (!a.config_path.empty()) {
    std::ifstream is(a.config_path);
    if (!is) throw std::invalid_argument("cannot open config " + a.config_path);
    cfg = TrainConfig::from_json(nlohmann::json::parse(is), f);
  } else {
    cfg = TrainConfig::defaults(f);
  }
  if (!a.preset.empty()) cfg.apply_preset(a.preset);
  if (a.iters >= 0) cfg.iterations = a.iters;
  if (a.batch > 0) cfg.batch_size = a.batch;
  if (a.segment > 0) cfg.segment_len = a.segment;
  if (a.checkpoint_interval >= 0) cfg.checkpoint_interval = a.checkpoint_interval;
  if (a.seed >= 0) cfg.rng_seed = static_cast<std::uint64_t>(a.seed);
  if (f == Formulation::CycleGan) {
    if (a.source == 0 || a.target == 0)
      throw std::invalid_argument("the pairwise formulation needs --source and --target domains");
    cfg.source_domain = a.source;
    cfg.target_domain = a.target;
  }
  cfg.precision = env_precision(cfg.precision);
  return cfg;
}

template <typename Real>
int run_train_typed(const TrainArgs& a, const TrainConfig& cfg) {
  DomainCorpus corpus = load_corpus(a.corpus);
  std::filesystem::create_directories(a.out);

  nlohmann::json manifest;
  manifest["run_id"] = a.run_id;
  manifest["command"] = "train";
  manifest["config"] = cfg.to_json();
  manifest["corpus"] = a.corpus;
  manifest["output_dir"] = a.out;
  manifest["seed"] = cfg.rng_seed;
  atomic_write(std::filesystem::path(a.out) / "manifest.json",
               [&](std::ostream& os) { os << manifest.dump(2) << '\n'; });

  const long report_every = std::max<long>(1, cfg.iterations / 20);
  StepCallback cb;
  if (!a.quiet)
    cb = [&](long step, const std::map<std::string, double>& losses) {
      if (step % report_every != 0 && step != cfg.iterations) return;
      std::cout << "step " << step;
      for (const auto& [term, v] : losses) std::cout << "  " << term << "=" << v;
      std::cout << "\n";
    };
  TrainState<Real> st = train<Real>(corpus, cfg, a.out, cb);
  write_loss_csv(std::filesystem::path(a.out) / "losses.csv", st);
  std::cout << "finished " << st.step << " steps; checkpoint at " << a.out << "/final.vcck\n";
  return 0;
}

int run_train(const TrainArgs& a) {
  TrainConfig cfg = build_train_config(a);
  if (cfg.precision == Precision::F32) return run_train_typed<float>(a, cfg);
  return run_train_typed<double>(a, cfg);
}

struct ConvertArgs {
  std::string checkpoint;
  std::string input;
  std::string out;
  int target = 0;
};

template <typename Real>
int run_convert_typed(const ConvertArgs& a) {
  TrainState<Real> st = state_from_checkpoint<Real>(load_checkpoint(a.checkpoint));
  FeatureSequence input = read_vcf1(a.input);
  input.frame_shift_ms = st.frame_shift_ms;
  const Generator<Real>* gen = nullptr;
  if (st.config.formulation == Formulation::CycleGan) {
    if (a.target == st.config.target_domain)
      gen = &*st.g;
    else if (a.target == st.config.source_domain)
      gen = &*st.f2;
    else
      throw std::invalid_argument("pairwise checkpoint converts only between domains " +
                                  std::to_string(st.config.source_domain) + " and " +
                                  std::to_string(st.config.target_domain));
  } else {
    gen = &*st.g;
  }
  FeatureSequence out = convert_utterance(*gen, input, a.target, st.stats);
  write_vcf1(a.out, out);
  std::cout << "converted " << a.input << " -> domain " << a.target << " (" << out.q << "x"
            << out.n << ") at " << a.out << "\n";
  return 0;
}

int run_convert(const ConvertArgs& a) {
  Checkpoint ck = load_checkpoint(a.checkpoint);
  TrainConfig cfg = TrainConfig::from_json(nlohmann::json::parse(ck.meta_json).at("config"));
  if (env_precision(cfg.precision) == Precision::F32) return run_convert_typed<float>(a);
  return run_convert_typed<double>(a);
}

struct EvaluateArgs {
  std::string pairs_csv;
  std::string out;
  std::string checkpoint;
  std::vector<long> modspec_dims;
  double frame_shift_ms = 8.0;
};

struct PairRow {
  std::string source, target, utterance, converted, reference;
};

std::vector<PairRow> read_pairs_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::invalid_argument("cannot open pair list " + path.string());
  std::vector<PairRow> rows;
  std::string line;
  std::getline(is, line);
  if (line != "source,target,utterance,converted,reference")
    throw std::invalid_argument(
        "pair list must start with 'source,target,utterance,converted,reference'");
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    PairRow r;
    std::istringstream ls(line);
    std::getline(ls, r.source, ',');
    std::getline(ls, r.target, ',');
    std::getline(ls, r.utterance, ',');
    std::getline(ls, r.converted, ',');
    std::getline(ls, r.reference, ',');
    if (r.reference.empty()) throw std::invalid_argument("malformed pair row: " + line);
    rows.push_back(std::move(r));
  }
  return rows;
}

int run_evaluate(const EvaluateArgs& a) {
  const auto base = std::filesystem::path(a.pairs_csv).parent_path();
  auto resolve = [&](const std::string& p) {
    std::filesystem::path fp(p);
    return fp.is_absolute() ? fp : base / fp;
  };
  auto rows = read_pairs_csv(a.pairs_csv);
  if (rows.empty()) throw std::invalid_argument("pair list is empty");
  std::filesystem::create_directories(a.out);

  std::vector<McdUtteranceRow> mcd_rows;
  std::vector<FeatureSequence> converted_store, reference_store;
  converted_store.reserve(rows.size());
  reference_store.reserve(rows.size());
  for (const auto& r : rows) {
    FeatureSequence conv = read_vcf1(resolve(r.converted));
    FeatureSequence ref = read_vcf1(resolve(r.reference));
    conv.frame_shift_ms = a.frame_shift_ms;
    ref.frame_shift_ms = a.frame_shift_ms;
    auto dtw = dtw_mcd(conv, ref);
    mcd_rows.push_back({r.source, r.target, r.utterance, dtw.mean_db});
    converted_store.push_back(std::move(conv));
    reference_store.push_back(std::move(ref));
  }
  write_mcd_utterance_csv(std::filesystem::path(a.out) / "mcd_utterances.csv", mcd_rows);
  write_mcd_pair_csv(std::filesystem::path(a.out) / "mcd_pairs.csv", mcd_rows);

  for (long dim : a.modspec_dims) {
    std::vector<const FeatureSequence*> conv_ptrs, ref_ptrs;
    for (const auto& s : converted_store) conv_ptrs.push_back(&s);
    for (const auto& s : reference_store) ref_ptrs.push_back(&s);
    char name[64];
    std::snprintf(name, sizeof(name), "modspec_converted_dim%ld.csv", dim);
    write_modspec_csv(std::filesystem::path(a.out) / name,
                      modulation_spectrum(conv_ptrs, dim));
    std::snprintf(name, sizeof(name), "modspec_reference_dim%ld.csv", dim);
    write_modspec_csv(std::filesystem::path(a.out) / name, modulation_spectrum(ref_ptrs, dim));
  }

  if (!a.checkpoint.empty()) {
    TrainState<double> st = state_from_checkpoint<double>(load_checkpoint(a.checkpoint));
    std::vector<ConversionSample> samples;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      samples.push_back({std::stoi(rows[i].source.substr(rows[i].source.find_first_of("0123456789"))),
                         std::stoi(rows[i].target.substr(rows[i].target.find_first_of("0123456789"))),
                         &converted_store[i]});
    }
    std::vector<AdversaryRow> adv;
    switch (st.config.formulation) {
      case Formulation::CStarGan:
        adv = adversary_report_cstargan(*st.d, *st.c, samples, st.stats);
        break;
      case Formulation::WStarGan:
        adv = adversary_report_wstargan(*st.dc, samples, st.stats);
        break;
      case Formulation::AStarGan1:
      case Formulation::AStarGan2:
        adv = adversary_report_astargan(*st.a, st.k_count, samples, st.stats);
        break;
      case Formulation::CycleGan:
        throw std::invalid_argument("adversary report is defined for the star formulations only");
    }
    write_adversary_csv(std::filesystem::path(a.out) / "adversary.csv", adv);
  }
  std::cout << "evaluated " << rows.size() << " conversions; reports in " << a.out << "\n";
  return 0;
}

struct TheoryArgs {
  long domains = 3;
  long support = 8;
  long seeds = 20;
  long steps = 5000;
  double step_size = 0.3;
  std::string formulation = "a-stargan1";
  std::string out;
};

int run_verify_theory(const TheoryArgs& a) {
  TabularFormulation form = tabular_formulation_from_name(a.formulation);
  const bool is_astar1 = form == TabularFormulation::AStar1;
  bool ok = true;
  std::ostringstream summary;
  summary << "equilibrium verification: K=" << a.domains << " S=" << a.support
          << " seeds=" << a.seeds << " steps=" << a.steps << " formulation=" << a.formulation
          << "\n";
  if (!a.out.empty()) std::filesystem::create_directories(a.out);

  for (long seed = 1; seed <= a.seeds; ++seed) {
    TabularGame game = TabularGame::random(a.domains, a.support, static_cast<std::uint64_t>(seed));

    // closed-form best response vs. the generator-loss identity
    const double kl = expected_kl(game);
    const double plug = generator_loss_with_optimal_classifier(game);
    const bool identity_ok = std::abs(kl - plug) <= 1e-10 * std::max(1.0, std::abs(kl));

    auto solved = solve_tabular_game(game, form, a.steps, a.step_size);
    const double final_kl = solved.kl_trajectory.back();

    TabularGame fixed = game;
    fixed.p_g = fixed.p_d;
    auto pinned = solve_tabular_game(fixed, form, std::min<long>(a.steps, 500), a.step_size);
    double max_drift = 0.0;
    for (double v : pinned.kl_trajectory) max_drift = std::max(max_drift, v);

    const bool seed_ok =
        identity_ok && (!is_astar1 || final_kl < 1e-3) && (!is_astar1 || max_drift < 1e-6);
    ok = ok && seed_ok;
    summary << "seed " << seed << ": final_kl=" << final_kl << " fixed_point_drift=" << max_drift
            << " identity=" << (identity_ok ? "ok" : "FAIL") << (seed_ok ? "" : "  <-- breach")
            << "\n";
    if (!a.out.empty()) {
      char name[64];
      std::snprintf(name, sizeof(name), "kl_trajectory_seed%02ld.csv", seed);
      write_kl_trajectory_csv(std::filesystem::path(a.out) / name, solved);
    }
  }
  summary << (ok ? "all tolerances met\n" : "tolerance breach\n");
  std::cout << summary.str();
  if (!a.out.empty())
    atomic_write(std::filesystem::path(a.out) / "summary.txt",
                 [&](std::ostream& os) { os << summary.str(); });
  return ok ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"vclab: multi-domain acoustic feature conversion lab"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* s = app.add_subcommand("synth-data", "generate a synthetic multi-domain corpus");
  s->add_option("--domains", synth.domains, "number of domains K (>= 2)");
  s->add_option("--dim", synth.dim, "feature dimension Q");
  s->add_option("--utts", synth.utts, "utterances per domain");
  s->add_option("--frames", synth.frames, "frames per utterance");
  s->add_option("--seed", synth.seed, "corpus seed");
  s->add_option("--out", synth.out, "output directory")->required();
  s->add_option("--style", synth.style, "corpus style (gaussian-domains)");
  s->add_option("--frame-shift-ms", synth.frame_shift_ms, "frame shift in milliseconds");
  s->add_option("--noise", synth.noise_sigma, "frame noise sigma");
  s->add_option("--mean-scale", synth.mean_scale, "domain mean separation scale");

  TrainArgs targs;
  auto* t = app.add_subcommand("train", "train one formulation on a corpus");
  t->add_option("--formulation", targs.formulation,
                "cyclegan | c-stargan | w-stargan | a-stargan1 | a-stargan2")
      ->required();
  t->add_option("--corpus", targs.corpus, "corpus manifest path")->required();
  t->add_option("--out", targs.out, "run output directory")->required();
  t->add_option("--config", targs.config_path, "JSON config (missing keys use defaults)");
  t->add_option("--preset", targs.preset, "paper | tiny");
  t->add_option("--iters", targs.iters, "iteration count override");
  t->add_option("--batch", targs.batch, "batch size override");
  t->add_option("--segment", targs.segment, "training segment length (multiple of 4)");
  t->add_option("--checkpoint-interval", targs.checkpoint_interval, "steps between checkpoints");
  t->add_option("--seed", targs.seed, "RNG seed override");
  t->add_option("--source", targs.source, "source domain (pairwise formulation)");
  t->add_option("--target", targs.target, "target domain (pairwise formulation)");
  t->add_option("--run-id", targs.run_id, "run identifier recorded in the manifest");
  t->add_flag("--quiet", targs.quiet, "suppress progress lines");

  ConvertArgs cargs;
  auto* c = app.add_subcommand("convert", "convert a feature file to a target domain");
  c->add_option("--checkpoint", cargs.checkpoint, "trained checkpoint (.vcck)")->required();
  c->add_option("--input", cargs.input, "input VCF1 feature file")->required();
  c->add_option("--target-domain", cargs.target, "1-based target domain")->required();
  c->add_option("--out", cargs.out, "output VCF1 path")->required();

  EvaluateArgs eargs;
  auto* e = app.add_subcommand("evaluate", "DTW-MCD and modulation-spectrum reports");
  e->add_option("--pairs", eargs.pairs_csv,
                "CSV: source,target,utterance,converted,reference")
      ->required();
  e->add_option("--out", eargs.out, "report output directory")->required();
  e->add_option("--checkpoint", eargs.checkpoint, "also emit the adversary report");
  e->add_option("--modspec-dim", eargs.modspec_dims, "0-based dimensions for modulation spectra");
  e->add_option("--frame-shift-ms", eargs.frame_shift_ms, "frame shift for the frequency axis");

  TheoryArgs thargs;
  auto* v = app.add_subcommand("verify-theory",
                               "tabular equilibrium verification (exit 2 on breach)");
  v->add_option("--domains", thargs.domains, "K");
  v->add_option("--support", thargs.support, "support size S");
  v->add_option("--seeds", thargs.seeds, "number of random games");
  v->add_option("--steps", thargs.steps, "solver steps");
  v->add_option("--step-size", thargs.step_size, "solver step size");
  v->add_option("--formulation", thargs.formulation,
                "a-stargan1 | a-stargan2 | c-stargan-adv-only");
  v->add_option("--out", thargs.out, "trajectory/summary output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*s) return run_synth(synth);
    if (*t) return run_train(targs);
    if (*c) return run_convert(cargs);
    if (*e) return run_evaluate(eargs);
    if (*v) return run_verify_theory(thargs);
  } catch (const vclab::numerical_error& err) {
    std::cerr << "numerical failure: " << err.what() << "\n";
    return 2;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 1;
  }
  return 1;
}
