#include <cstdint>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "prefopt/amapo.hpp"
#include "prefopt/data.hpp"
#include "prefopt/diagnostics.hpp"
#include "prefopt/io.hpp"
#include "prefopt/policy.hpp"

namespace prefopt {

namespace {

struct MethodFlags {
  std::string method = "amapo";
  MethodConfig config;

  void attach(CLI::App* cmd, bool with_method = true) {
    if (with_method)
      cmd->add_option("--method", method, "Method name (one of: dpo, ipo, slic, cpo, odpo, kto, simpo, focalpo, alpha_dpo, amapo)");
    cmd->add_option("--beta", config.beta, "Reward temperature");
    cmd->add_option("--gamma-const", config.gamma_const, "Constant margin (simpo C / alpha_dpo gamma)");
    cmd->add_option("--tau", config.tau, "SLiC hinge label scale");
    cmd->add_option("--lambda-sft", config.lambda_sft, "SFT weight (cpo/slic)");
    cmd->add_option("--lambda-w", config.lambda_w, "KTO chosen-side weight");
    cmd->add_option("--lambda-l", config.lambda_l, "KTO rejected-side weight");
    cmd->add_option("--focal-gamma", config.focal_gamma, "FocalPO modulating exponent");
    cmd->add_option("--alpha", config.alpha, "alpha_dpo margin coefficient");
    cmd->add_flag("--clamp-mu", config.clamp_mu_r,
                  "AMaPO: clamp mu_r to max(mu_r, 0) before margin scaling");
  }
};

std::vector<ScoredInstance> load_scored(const std::string& dump_path,
                                        const std::string& data_path,
                                        const std::string& model_path) {
  if (!dump_path.empty()) return read_logp_dump(dump_path);
  if (data_path.empty() || model_path.empty())
    throw ValidationError("provide either --dump or both --data and --model");
  const Checkpoint ckpt = read_checkpoint(model_path);
  const auto instances = read_dataset(data_path);
  return score_split(ckpt.model, ckpt.reference, instances);
}

int run_gen(std::uint64_t seed, int prompts, int valid_prompts, int candidates, int dim,
            bool noise, int length_min, int length_max, const std::string& out, bool quiet) {
  GeneratorConfig cfg = GeneratorConfig::from_master_seed(seed);
  cfg.n_prompts_train = prompts;
  cfg.n_prompts_valid = valid_prompts;
  cfg.candidates_per_prompt = candidates;
  cfg.feature_dim = dim;
  cfg.preference_noise = noise;
  cfg.length_min = length_min;
  cfg.length_max = length_max;
  const SplitDataset ds = generate(cfg);
  const auto instances = ds.all();
  write_dataset(out, instances);
  if (!quiet)
    std::cout << "wrote " << instances.size() << " instances (id=" << ds.id.size()
              << " prompt_ood=" << ds.prompt_ood.size()
              << " response_ood=" << ds.response_ood.size()
              << " mutual_ood=" << ds.mutual_ood.size() << ") to " << out << "\n";
  return 0;
}

int run_train(std::uint64_t seed, const MethodFlags& mf, const std::string& data_path,
              double lr, int epochs, int batch_size, bool no_cosine, bool alpha_dataset_znorm,
              const std::string& model_out, const std::string& report_out,
              const std::string& hist_out, bool quiet) {
  TrainConfig tc;
  tc.method = mf.method;
  tc.method_config = mf.config;
  tc.learning_rate = lr;
  tc.epochs = epochs;
  tc.batch_size = batch_size;
  tc.seed = seed;
  tc.cosine_schedule = !no_cosine;
  tc.alpha_dataset_znorm = alpha_dataset_znorm;
  const auto dataset = read_dataset(data_path);
  const TrainResult result = train(tc, dataset);
  if (!model_out.empty())
    write_checkpoint(model_out, Checkpoint{result.model, result.reference, tc});
  if (!report_out.empty()) write_report_csv(report_out, result.report.rows);
  if (!hist_out.empty()) write_histogram_csv(hist_out, result.report.histograms);
  if (!quiet) {
    for (const ReportRow& row : result.report.rows) {
      if (row.epoch == result.report.rows.back().epoch)
        std::cout << "epoch " << row.epoch << " split=" << row.split
                  << " ranking_accuracy=" << format_double(row.ranking_accuracy)
                  << " mean_loss=" << format_double(row.mean_loss) << "\n";
    }
  }
  return 0;
}

int run_eval(const std::string& model_path, const std::string& data_path,
             const std::string& mode_name, double min_accuracy, bool has_min,
             const std::string& dump_out, bool quiet) {
  const Checkpoint ckpt = read_checkpoint(model_path);
  const auto dataset = read_dataset(data_path);
  const AccuracyMode mode = mode_name == "length_normalized" ? AccuracyMode::kLengthNormalized
                                                             : AccuracyMode::kRaw;
  if (mode_name != "raw" && mode_name != "length_normalized")
    throw ValidationError("mode must be 'raw' or 'length_normalized'");

  bool below = false;
  std::vector<ScoredInstance> all_scored;
  for (SplitTag tag : {SplitTag::kId, SplitTag::kPromptOod, SplitTag::kResponseOod,
                       SplitTag::kMutualOod}) {
    std::vector<PreferenceInstance> split;
    for (const auto& inst : dataset)
      if (inst.split_tag == tag) split.push_back(inst);
    if (split.empty()) continue;
    const auto scored = score_split(ckpt.model, ckpt.reference, split);
    all_scored.insert(all_scored.end(), scored.begin(), scored.end());
    const double acc = ranking_accuracy(scored, mode);
    if (!quiet)
      std::cout << "split=" << to_string(tag) << " n=" << split.size()
                << " ranking_accuracy=" << format_double(acc) << "\n";
    if (has_min && acc < min_accuracy) below = true;
  }
  if (all_scored.empty()) throw ValidationError("empty dataset");
  if (!dump_out.empty()) write_logp_dump(dump_out, all_scored);
  if (below) {
    std::cerr << "E_VALIDATE: ranking accuracy below --min-accuracy threshold\n";
    return 2;
  }
  return 0;
}

int run_gradcheck(std::uint64_t seed, const std::string& method, int trials, double tol,
                  bool quiet) {
  std::vector<GradCheckResult> results;
  if (method == "all") {
    results = grad_check_all(trials, tol, seed);
  } else {
    const MethodSpec spec = registry_lookup(method, MethodConfig{});
    results.push_back(grad_check(spec.name, trials, tol, seed));
  }
  bool failed = false;
  for (const GradCheckResult& r : results) {
    if (!quiet)
      std::cout << "method=" << r.method << " trials=" << r.trials << " compared=" << r.compared
                << " kink_skips=" << r.kink_skips
                << " max_rel_err=" << format_double(r.max_rel_err)
                << (r.passed() ? " pass" : " FAIL") << "\n";
    if (!r.passed()) {
      failed = true;
      std::cerr << "E_GRADCHECK: method " << r.method << " exceeded tol " << format_double(tol)
                << " (max_rel_err=" << format_double(r.max_rel_err) << ") instance "
                << r.first_failure << "\n";
    }
  }
  return failed ? 2 : 0;
}

int run_margins(const std::string& dump_path, const std::string& data_path,
                const std::string& model_path, double beta, int batch_size, bool clamp_mu,
                const std::string& out) {
  const auto scored = load_scored(dump_path, data_path, model_path);
  if (scored.empty()) throw ValidationError("empty dataset");
  if (batch_size < 1) throw ValidationError("batch_size must be >= 1");

  std::string csv = "id,r,mu_r,sigma_r,zscore,raw_margin,scaled_margin,oracle_margin\n";
  for (std::size_t off = 0; off < scored.size(); off += static_cast<std::size_t>(batch_size)) {
    const std::size_t n =
        std::min<std::size_t>(static_cast<std::size_t>(batch_size), scored.size() - off);
    std::vector<double> r(n);
    for (std::size_t i = 0; i < n; ++i) {
      const ScoredInstance& s = scored[off + i];
      r[i] = beta / s.instance.chosen_length * s.logp_chosen -
             beta / s.instance.rejected_length * s.logp_rejected;
    }
    const AdaptiveMarginBatch m = compute_adaptive_margins(r, beta, clamp_mu);
    for (std::size_t i = 0; i < n; ++i) {
      const ScoredInstance& s = scored[off + i];
      const double z =
          m.stats.sigma_r < 1e-8 ? 0.0 : (m.stats.mu_r - r[i]) / m.stats.sigma_r;
      csv += s.instance.id;
      csv += ',' + format_double(r[i]);
      csv += ',' + format_double(m.stats.mu_r);
      csv += ',' + format_double(m.stats.sigma_r);
      csv += ',' + format_double(z);
      csv += ',' + format_double(m.raw_margins[i]);
      csv += ',' + format_double(m.scaled_margins[i]);
      csv += ',';
      if (const OracleMargin om = oracle_margin(s.instance); om.available)
        csv += format_double(om.gamma_star);
      csv += '\n';
    }
  }
  atomic_write(out, csv);
  return 0;
}

int run_cases(const std::string& dump_path, const std::string& data_path,
              const std::string& model_path, const MethodFlags& mf, int batch_size,
              const std::string& out) {
  const MethodSpec spec = registry_lookup(mf.method, mf.config);
  if (!spec.margin_defined())
    throw ValidationError("margin is undefined for method '" + mf.method +
                          "'; case classification is skipped for it");
  const auto scored = load_scored(dump_path, data_path, model_path);
  if (scored.empty()) throw ValidationError("empty dataset");
  if (batch_size < 1) throw ValidationError("batch_size must be >= 1");

  std::string csv = "id,r,gamma,case_id\n";
  for (std::size_t off = 0; off < scored.size(); off += static_cast<std::size_t>(batch_size)) {
    const std::size_t n =
        std::min<std::size_t>(static_cast<std::size_t>(batch_size), scored.size() - off);
    const std::span<const ScoredInstance> batch(scored.data() + off, n);
    const BatchEvaluation ev = evaluate_batch(spec, batch);
    for (std::size_t i = 0; i < n; ++i) {
      const double r = instance_score(spec, batch[i]);
      const double gamma = *ev.grads[i].margin_used;
      csv += batch[i].instance.id;
      csv += ',' + format_double(r);
      csv += ',' + format_double(gamma);
      csv += ',' + std::to_string(classify_case(r, gamma).case_id);
      csv += '\n';
    }
  }
  atomic_write(out, csv);
  return 0;
}

}  // namespace

int cli_main(int argc, const char* const* argv) {
  CLI::App app{"Preference-optimization loss laboratory: unified margin-based losses, "
               "adaptive-margin training, and gradient diagnostics on synthetic "
               "Bradley-Terry data.\n"
               "Conventions: r = gamma counts as above the margin; r = 0 counts as "
               "incorrectly ranked (strict preference)."};
  app.require_subcommand(1);
  std::uint64_t seed = 0;
  bool quiet = false;
  app.add_option("--seed", seed, "Master seed");
  app.add_flag("--quiet", quiet, "Suppress progress output");

  // gen
  auto* gen = app.add_subcommand("gen", "Generate a synthetic four-split preference dataset");
  gen->fallthrough();
  int prompts = 200, valid_prompts = 50, candidates = 4, dim = 16;
  int length_min = 5, length_max = 50;
  bool noise = false;
  std::string gen_out;
  gen->add_option("--prompts", prompts, "Training prompts");
  gen->add_option("--valid-prompts", valid_prompts, "Validation prompts");
  gen->add_option("--candidates", candidates, "Candidate responses per prompt (>= 2)");
  gen->add_option("--dim", dim, "Feature dimension");
  gen->add_flag("--noise", noise, "Sample labels from the Bradley-Terry model");
  gen->add_option("--length-min", length_min, "Minimum response length");
  gen->add_option("--length-max", length_max, "Maximum response length");
  gen->add_option("--out", gen_out, "Output dataset (JSONL)")->required();

  // train
  auto* tr = app.add_subcommand("train", "Train the toy policy on the id split");
  tr->fallthrough();
  MethodFlags train_mf;
  std::string train_data, model_out, report_out, hist_out;
  double lr = 1e-2;
  int epochs = 1, batch_size = 32;
  bool no_cosine = false, alpha_dataset_znorm = false;
  train_mf.attach(tr);
  tr->add_option("--data", train_data, "Dataset (JSONL)")->required();
  tr->add_option("--lr", lr, "Learning rate");
  tr->add_option("--epochs", epochs, "Training epochs");
  tr->add_option("--batch-size", batch_size, "Batch size (margin estimation batch)");
  tr->add_flag("--no-cosine", no_cosine, "Disable the cosine schedule with warmup");
  tr->add_flag("--alpha-dataset-znorm", alpha_dataset_znorm,
               "alpha_dpo: normalize M over the whole train split each epoch");
  tr->add_option("--out", model_out, "Checkpoint output (JSON)");
  tr->add_option("--report", report_out, "Per-epoch report (CSV)");
  tr->add_option("--hist", hist_out, "Final-epoch distribution snapshots (CSV)");

  // eval
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint's ranking accuracy per split");
  ev->fallthrough();
  std::string eval_model, eval_data, eval_mode = "raw", dump_out;
  double min_accuracy = 0.0;
  ev->add_option("--model", eval_model, "Checkpoint (JSON)")->required();
  ev->add_option("--data", eval_data, "Dataset (JSONL)")->required();
  ev->add_option("--mode", eval_mode, "Accuracy mode: raw | length_normalized");
  auto* min_opt = ev->add_option("--min-accuracy", min_accuracy,
                                 "Exit 2 when any split falls below this accuracy");
  ev->add_option("--dump-out", dump_out, "Export policy/reference log-probs (JSONL)");

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck",
                                "Finite-difference check of the analytic gradients");
  gc->fallthrough();
  std::string gc_method = "all";
  int trials = 100;
  double tol = 1e-6;
  gc->add_option("--method", gc_method, "Method name or 'all'");
  gc->add_option("--trials", trials, "Randomized trials per method");
  gc->add_option("--tol", tol, "Relative tolerance");

  // margins
  auto* mg = app.add_subcommand("margins", "Dump adaptive margins per instance (CSV)");
  mg->fallthrough();
  std::string mg_dump, mg_data, mg_model, mg_out;
  double mg_beta = 2.0;
  int mg_batch = 32;
  bool mg_clamp = false;
  mg->add_option("--dump", mg_dump, "Log-prob dump (JSONL)");
  mg->add_option("--data", mg_data, "Dataset (JSONL), requires --model");
  mg->add_option("--model", mg_model, "Checkpoint to score --data with");
  mg->add_option("--beta", mg_beta, "Reward temperature");
  mg->add_option("--batch-size", mg_batch, "Margin estimation batch size");
  mg->add_flag("--clamp-mu", mg_clamp, "Clamp mu_r to max(mu_r, 0) before scaling");
  mg->add_option("--out", mg_out, "Output CSV")->required();

  // cases
  auto* cs = app.add_subcommand("cases", "Classify instances into the four margin cases (CSV)");
  cs->fallthrough();
  MethodFlags cases_mf;
  cases_mf.method = "simpo";
  std::string cs_dump, cs_data, cs_model, cs_out;
  int cs_batch = 32;
  cases_mf.attach(cs);
  cs->add_option("--dump", cs_dump, "Log-prob dump (JSONL)");
  cs->add_option("--data", cs_data, "Dataset (JSONL), requires --model");
  cs->add_option("--model", cs_model, "Checkpoint to score --data with");
  cs->add_option("--batch-size", cs_batch, "Batch size for batch-adaptive margins");
  cs->add_option("--out", cs_out, "Output CSV")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (gen->parsed())
      return run_gen(seed, prompts, valid_prompts, candidates, dim, noise, length_min,
                     length_max, gen_out, quiet);
    if (tr->parsed())
      return run_train(seed, train_mf, train_data, lr, epochs, batch_size, no_cosine,
                       alpha_dataset_znorm, model_out, report_out, hist_out, quiet);
    if (ev->parsed())
      return run_eval(eval_model, eval_data, eval_mode, min_accuracy, min_opt->count() > 0,
                      dump_out, quiet);
    if (gc->parsed()) return run_gradcheck(seed, gc_method, trials, tol, quiet);
    if (mg->parsed()) return run_margins(mg_dump, mg_data, mg_model, mg_beta, mg_batch,
                                         mg_clamp, mg_out);
    if (cs->parsed()) return run_cases(cs_dump, cs_data, cs_model, cases_mf, cs_batch, cs_out);
  } catch (const ParseError& e) {
    std::cerr << "E_PARSE: " << e.what() << "\n";
    return 1;
  } catch (const DivergenceError& e) {
    std::cerr << "E_DIVERGE: " << e.what() << "\n";
    return 1;
  } catch (const ValidationError& e) {
    std::cerr << "E_VALIDATE: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace prefopt
