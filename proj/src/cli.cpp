#include "mrn/cli.hpp"

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "mrn/config.hpp"
#include "mrn/data.hpp"
#include "mrn/engine.hpp"
#include "mrn/network.hpp"
#include "mrn/objectives.hpp"
#include "mrn/png_io.hpp"

namespace mrn {
namespace {

void note_threads(int threads) {
  if (threads != 1)
    std::cerr << "note: execution is single-threaded; --threads " << threads
              << " clamped to 1 (bit-exact reproducibility)\n";
}

// Scales loaded samples to the configured side; synthesized data already
// matches. Masks are re-binarized after interpolation.
void resize_samples(std::vector<Sample>& samples, int side) {
  for (auto& s : samples) {
    if (s.image->h == side && s.image->w == side) continue;
    s.image = resize_bilinear(s.image, side, side);
    s.mask = resize_bilinear(s.mask, side, side);
    binarize_mask(s.mask);
  }
}

int cmd_synth(int n, int side, std::uint64_t seed, const std::string& out) {
  auto samples = synth_dataset(n, side, seed);
  save_dataset(out, samples);
  std::cout << "wrote " << n << " image/mask pairs (side " << side << ") to " << out << '\n';
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& resume, bool verbose) {
  RunConfig cfg = load_run_config(config_path);
  std::filesystem::create_directories(cfg.out_dir);
  save_run_config(cfg.out_dir + "/config.json", cfg);

  std::vector<Sample> samples;
  if (cfg.data.dir.empty()) {
    samples = synth_dataset(cfg.data.synth_n, cfg.data.side, derive_seed(cfg.seed, "data"));
    save_dataset(cfg.out_dir + "/data", samples);
    std::cout << "synthesized " << samples.size() << " samples into " << cfg.out_dir
              << "/data\n";
  } else {
    samples = load_dataset(cfg.data.dir);
    resize_samples(samples, cfg.data.side);
  }

  std::vector<Sample> train_set, val_set;
  if (cfg.overfit) {
    train_set = samples;  // the engine validates on the training set itself
  } else {
    auto [tr, te] = split_stratified(samples, cfg.data.train_frac, derive_seed(cfg.seed, "split"));
    train_set = std::move(tr);
    val_set = std::move(te);
  }

  TrainConfig tc = to_train_config(cfg);
  tc.verbose = verbose;

  TrainResult res;
  if (cfg.arch == "mrn") {
    Mrn<float> model(cfg.model, derive_seed(cfg.seed, "init"));
    res = train(model, train_set, val_set, tc, resume);
  } else {
    Baseline<float> model(cfg.model, derive_seed(cfg.seed, "init"));
    res = train(model, train_set, val_set, tc, resume);
  }

  std::cout << "trained " << cfg.arch << " for " << res.history.size() << " epoch(s)";
  if (res.early_stopped) std::cout << " (early stop)";
  std::cout << "\nbest val loss " << res.best_val << " at epoch " << res.best_epoch
            << "\nfinal train DC " << res.final_train_dc << "\nwrote " << cfg.out_dir
            << "/{config.json, best.ckpt, last.ckpt, history.csv}\n";
  return 0;
}

// A checkpoint plus the model it reconstructs; arch decides which branch is
// live. Inference always runs in eval mode off-tape.
struct LoadedModel {
  std::unique_ptr<Mrn<float>> mrn;
  std::unique_ptr<Baseline<float>> baseline;
  NormStats norm;
  MrnConfig cfg;
};

LoadedModel load_model(const std::string& path, const std::string& expected_arch) {
  auto ck = read_checkpoint(path);
  if (ck.meta.arch != expected_arch)
    throw config_error("checkpoint " + path + " holds a '" + ck.meta.arch +
                       "' model but was requested as '" + expected_arch + "'");
  LoadedModel m;
  m.norm = ck.meta.norm;
  m.cfg = ck.meta.model;
  if (ck.meta.arch == "mrn") {
    m.mrn = std::make_unique<Mrn<float>>(ck.meta.model);
    apply_checkpoint(ck, m.mrn->params());
  } else {
    m.baseline = std::make_unique<Baseline<float>>(ck.meta.model);
    apply_checkpoint(ck, m.baseline->params());
  }
  return m;
}

DualOutput<float> infer(LoadedModel& m, const ArrayPtr<float>& x) {
  auto* tape = static_cast<Tape<float>*>(nullptr);
  return m.mrn ? dual_forward(*m.mrn, x, tape, false) : dual_forward(*m.baseline, x, tape, false);
}

int cmd_eval(const std::string& ckpt, const std::string& baseline_ckpt,
             const std::string& data_dir, const std::string& models_csv,
             const std::string& out_dir, std::uint64_t seed, double train_frac,
             const std::string& split) {
  std::vector<std::string> wanted;
  std::stringstream ss(models_csv);
  for (std::string tok; std::getline(ss, tok, ',');) {
    if (tok == "ddsl") tok = "mrn";  // published name for the same network
    if (tok != "mrn" && tok != "baseline")
      throw config_error("--models: unknown model '" + tok + "' (expected mrn|ddsl|baseline)");
    wanted.push_back(tok);
  }
  if (wanted.empty()) throw config_error("--models: no model names given");

  auto samples = load_dataset(data_dir);
  if (split != "all") {
    // reconstruct the training run's split: same root seed, same derivation
    auto [tr, te] = split_stratified(samples, train_frac, derive_seed(seed, "split"));
    samples = (split == "train") ? std::move(tr) : std::move(te);
  }
  check(!samples.empty(), "eval: selected split is empty");

  StrataReportBuilder builder;
  for (const auto& name : wanted) {
    const std::string& path = (name == "baseline") ? baseline_ckpt : ckpt;
    if (path.empty())
      throw config_error("--models includes '" + name + "' but no checkpoint was given for it");
    LoadedModel m = load_model(path, name);
    for (const auto& s : samples) {
      auto x = normalize(s.image, m.norm);
      auto out = infer(m, x);
      builder.add(name, s.meta, metrics(out.main_map, s.mask));
    }
  }

  StrataReport rep = builder.build();
  std::filesystem::create_directories(out_dir);
  {
    std::ofstream csv(out_dir + "/strata_report.csv");
    check(bool(csv), "eval: cannot write " + out_dir + "/strata_report.csv");
    csv << rep.to_csv();
  }
  {
    std::ofstream txt(out_dir + "/strata_report.txt");
    check(bool(txt), "eval: cannot write " + out_dir + "/strata_report.txt");
    txt << rep.to_text();
  }
  std::cout << rep.to_text() << "wrote " << out_dir << "/strata_report.{csv,txt}\n";
  return 0;
}

ArrayPtr<float> image_to_array(const PngImage& img, int in_channels) {
  check(img.channels == in_channels || img.channels == 1,
        "predict: image has " + std::to_string(img.channels) + " channel(s) but the model takes " +
            std::to_string(in_channels));
  auto x = make_array<float>(1, in_channels, img.h, img.w);
  for (int c = 0; c < in_channels; ++c) {
    const int src = (img.channels == 1) ? 0 : c;  // grayscale replicates
    for (int y = 0; y < img.h; ++y)
      for (int xx = 0; xx < img.w; ++xx) x->at(0, c, y, xx) = img.at(src, y, xx);
  }
  return x;
}

void write_mask_png(const std::string& path, const ArrayPtr<float>& prob) {
  PngImage out;
  out.channels = 1;
  out.h = prob->h;
  out.w = prob->w;
  out.data.resize(prob->val.size());
  for (size_t i = 0; i < prob->val.size(); ++i) out.data[i] = prob->val[i] > 0.5f ? 1.0f : 0.0f;
  write_png8(path, out);
}

int cmd_predict(const std::string& ckpt, const std::string& image_path, const std::string& out,
                const std::string& prob_path, const std::string& aux_path, int side) {
  auto ck = read_checkpoint(ckpt);
  LoadedModel m = load_model(ckpt, ck.meta.arch);
  if (!aux_path.empty() && !m.mrn)
    throw config_error("--aux: a '" + ck.meta.arch + "' checkpoint has no auxiliary head");

  PngImage img = read_png(image_path);
  auto x0 = image_to_array(img, m.cfg.in_channels);
  const int stride = 1 << m.cfg.depth;
  const int run_h = side > 0 ? side : img.h;
  const int run_w = side > 0 ? side : img.w;
  if (run_h % stride != 0 || run_w % stride != 0)
    throw config_error("predict: inference side " + std::to_string(run_h) + "x" +
                       std::to_string(run_w) + " is not divisible by 2^depth (" +
                       std::to_string(stride) + "); pass --side");
  auto x = resize_bilinear(x0, run_h, run_w);

  auto z = normalize(x, m.norm);
  auto out_maps = infer(m, z);

  // maps are produced at the inference side and reported at the input's size
  auto main_map = resize_bilinear(out_maps.main_map, img.h, img.w);
  write_mask_png(out, main_map);
  std::cout << "wrote " << out << " (" << img.w << "x" << img.h << ")\n";
  if (!prob_path.empty()) {
    write_png16_gray(prob_path, main_map->val, main_map->h, main_map->w);
    std::cout << "wrote " << prob_path << " (16-bit probability map)\n";
  }
  if (!aux_path.empty()) {
    auto aux_map = resize_bilinear(out_maps.aux_map, img.h, img.w);
    write_mask_png(aux_path, aux_map);
    std::cout << "wrote " << aux_path << " (auxiliary-path mask)\n";
  }
  return 0;
}

int cmd_gradcheck(std::uint64_t seed) {
  MrnConfig cfg;
  cfg.depth = 2;
  cfg.base_channels = 4;
  cfg.descriptors = 4;
  GradcheckReport rep = gradcheck(cfg, seed);
  std::cout << rep.to_text();
  return rep.pass ? 0 : 3;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"melanoma lesion segmentation workbench"};
  app.require_subcommand(1);

  int threads = 1;

  auto* synth = app.add_subcommand("synth", "generate a synthetic dermoscopy dataset");
  int synth_n = 200, synth_side = 64;
  std::uint64_t synth_seed = 0;
  std::string synth_out;
  synth->add_option("--n", synth_n, "number of samples")->capture_default_str();
  synth->add_option("--side", synth_side, "image side in pixels (multiple of 16)")
      ->capture_default_str();
  synth->add_option("--seed", synth_seed, "root seed")->capture_default_str();
  synth->add_option("--out", synth_out, "output directory")->required();
  synth->add_option("--threads", threads, "accepted for symmetry; execution is single-threaded");

  auto* train_cmd = app.add_subcommand("train", "train a model from a run configuration");
  std::string train_config, train_resume;
  bool train_verbose = false;
  train_cmd->add_option("--config", train_config, "run configuration (JSON)")->required();
  train_cmd->add_option("--resume", train_resume, "checkpoint to continue from");
  train_cmd->add_flag("--verbose", train_verbose, "per-epoch progress on stderr");
  train_cmd->add_option("--threads", threads,
                        "accepted for symmetry; execution is single-threaded");

  auto* eval_cmd = app.add_subcommand("eval", "stratified evaluation of trained checkpoints");
  std::string eval_ckpt, eval_baseline_ckpt, eval_data, eval_models = "mrn", eval_out = ".";
  std::string eval_split = "test";
  std::uint64_t eval_seed = 0;
  double eval_train_frac = 0.7;
  eval_cmd->add_option("--checkpoint", eval_ckpt, "mrn checkpoint");
  eval_cmd->add_option("--baseline-checkpoint", eval_baseline_ckpt, "baseline checkpoint");
  eval_cmd->add_option("--data", eval_data, "dataset directory")->required();
  eval_cmd->add_option("--models", eval_models, "comma list: mrn|ddsl|baseline")
      ->capture_default_str();
  eval_cmd->add_option("--out", eval_out, "report output directory")->capture_default_str();
  eval_cmd
      ->add_option("--seed", eval_seed, "the training run's root seed (to rebuild its split)")
      ->capture_default_str();
  eval_cmd->add_option("--train-frac", eval_train_frac, "the training run's split fraction")
      ->capture_default_str();
  eval_cmd->add_option("--split", eval_split, "which samples to score")
      ->check(CLI::IsMember({"test", "train", "all"}))
      ->capture_default_str();
  eval_cmd->add_option("--threads", threads,
                       "accepted for symmetry; execution is single-threaded");

  auto* predict_cmd = app.add_subcommand("predict", "segment one image with a checkpoint");
  std::string pd_ckpt, pd_image, pd_out, pd_prob, pd_aux;
  int pd_side = 64;
  predict_cmd->add_option("--checkpoint", pd_ckpt, "model checkpoint")->required();
  predict_cmd->add_option("--image", pd_image, "input PNG")->required();
  predict_cmd->add_option("--out", pd_out, "output mask PNG ({0,255})")->required();
  predict_cmd->add_option("--prob", pd_prob, "also write a 16-bit probability PNG here");
  predict_cmd->add_option("--aux", pd_aux, "also write the auxiliary-path mask here");
  predict_cmd
      ->add_option("--side", pd_side, "inference side (0 = the image's own size); "
                                      "the output always matches the input size")
      ->capture_default_str();
  predict_cmd->add_option("--threads", threads,
                          "accepted for symmetry; execution is single-threaded");

  auto* gc_cmd = app.add_subcommand("gradcheck",
                                    "compare analytic gradients against finite differences");
  std::uint64_t gc_seed = 42;
  gc_cmd->add_option("--seed", gc_seed, "probe seed")->capture_default_str();
  gc_cmd->add_option("--threads", threads,
                     "accepted for symmetry; execution is single-threaded");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  note_threads(threads);
  try {
    if (synth->parsed()) return cmd_synth(synth_n, synth_side, synth_seed, synth_out);
    if (train_cmd->parsed()) return cmd_train(train_config, train_resume, train_verbose);
    if (eval_cmd->parsed())
      return cmd_eval(eval_ckpt, eval_baseline_ckpt, eval_data, eval_models, eval_out, eval_seed,
                      eval_train_frac, eval_split);
    if (predict_cmd->parsed())
      return cmd_predict(pd_ckpt, pd_image, pd_out, pd_prob, pd_aux, pd_side);
    if (gc_cmd->parsed()) return cmd_gradcheck(gc_seed);
  } catch (const numerical_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}

}  // namespace mrn
