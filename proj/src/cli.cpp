#include "deformwarp/cli.hpp"

#include <CLI11.hpp>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <toml.hpp>

#include "deformwarp/checkpoint.hpp"
#include "deformwarp/io.hpp"
#include "deformwarp/metrics.hpp"
#include "deformwarp/synth.hpp"

namespace deformwarp {
namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Run configuration

namespace {

using KeySet = std::map<std::string, std::set<std::string>>;

const KeySet& known_keys() {
  static const KeySet keys{
      {"model",
       {"variant", "image_height", "image_width", "channel_divisor", "extra_block", "two_stream",
        "skip"}},
      {"train",
       {"iterations", "lambda", "neighborhood", "recon", "batch_size", "seed", "lr", "beta1",
        "beta2", "eps", "sigma", "freeze_discriminator", "checkpoint_every", "feature_weights"}},
      {"data", {"manifest", "synthetic_pairs", "synthetic_seed"}},
      {"output", {"dir"}},
  };
  return keys;
}

class TomlView {
 public:
  TomlView(const toml::table& t, fs::path base) : t_(t), base_(std::move(base)) {}

  const toml::node* find(const std::string& table, const std::string& key) const {
    const toml::node* tbl = t_.get(table);
    if (!tbl || !tbl->is_table()) return nullptr;
    return tbl->as_table()->get(key);
  }

  std::optional<long> integer(const std::string& table, const std::string& key) const {
    const toml::node* n = find(table, key);
    if (!n) return std::nullopt;
    auto v = n->value_exact<std::int64_t>();
    if (!v) throw ConfigError("config key '" + table + "." + key + "' must be an integer");
    return static_cast<long>(*v);
  }
  std::optional<double> number(const std::string& table, const std::string& key) const {
    const toml::node* n = find(table, key);
    if (!n) return std::nullopt;
    if (!n->is_number()) throw ConfigError("config key '" + table + "." + key + "' must be a number");
    return n->value<double>();
  }
  std::optional<bool> boolean(const std::string& table, const std::string& key) const {
    const toml::node* n = find(table, key);
    if (!n) return std::nullopt;
    auto v = n->value_exact<bool>();
    if (!v) throw ConfigError("config key '" + table + "." + key + "' must be true or false");
    return *v;
  }
  std::optional<std::string> string(const std::string& table, const std::string& key) const {
    const toml::node* n = find(table, key);
    if (!n) return std::nullopt;
    auto v = n->value_exact<std::string>();
    if (!v) throw ConfigError("config key '" + table + "." + key + "' must be a string");
    return *v;
  }
  std::optional<fs::path> path(const std::string& table, const std::string& key) const {
    auto s = string(table, key);
    if (!s) return std::nullopt;
    const fs::path p(*s);
    return p.is_absolute() || base_.empty() ? p : base_ / p;
  }

 private:
  const toml::table& t_;
  fs::path base_;
};

template <typename T>
void set_if(T& field, const std::optional<T>& v) {
  if (v) field = *v;
}

int to_int(const std::optional<long>& v, const std::string& key, int& field) {
  if (v) {
    if (*v < INT32_MIN || *v > INT32_MAX) throw ConfigError("config key '" + key + "' out of range");
    field = static_cast<int>(*v);
  }
  return field;
}

template <typename Fn>
auto as_config_error(Fn&& fn) {
  try {
    return fn();
  } catch (const InvalidArgument& e) {
    throw ConfigError(e.what());
  }
}

}  // namespace

RunConfig parse_run_config(const std::string& toml_text, const std::optional<Variant>& variant_override,
                           const fs::path& base_dir) {
  toml::table tbl;
  try {
    tbl = toml::parse(toml_text);
  } catch (const toml::parse_error& e) {
    std::ostringstream os;
    os << "config: " << e.description() << " at line " << e.source().begin.line;
    throw ConfigError(os.str());
  }
  for (auto&& [table, node] : tbl) {
    const std::string t(table.str());
    auto it = known_keys().find(t);
    if (it == known_keys().end() || !node.is_table()) {
      throw ConfigError("unknown config key '" + t + "'");
    }
    for (auto&& [key, value] : *node.as_table()) {
      if (!it->second.count(std::string(key.str()))) {
        throw ConfigError("unknown config key '" + t + "." + std::string(key.str()) + "'");
      }
    }
  }
  const TomlView v(tbl, base_dir);

  RunConfig rc;
  if (auto name = v.string("model", "variant")) rc.variant = as_config_error([&] { return parse_variant(*name); });
  if (variant_override) rc.variant = *variant_override;
  const VariantConfig vc = build_variant(rc.variant);
  rc.generator = vc.generator;
  rc.train = vc.train;

  GeneratorConfig& g = rc.generator;
  to_int(v.integer("model", "image_height"), "model.image_height", g.image_height);
  to_int(v.integer("model", "image_width"), "model.image_width", g.image_width);
  to_int(v.integer("model", "channel_divisor"), "model.channel_divisor", g.channel_divisor);
  rc.discriminator.channel_divisor = g.channel_divisor;
  set_if(g.extra_block, v.boolean("model", "extra_block"));
  set_if(g.two_stream, v.boolean("model", "two_stream"));
  if (auto s = v.string("model", "skip")) g.skip = as_config_error([&] { return parse_skip_mode(*s); });

  TrainConfig& t = rc.train;
  set_if(t.iterations, v.integer("train", "iterations"));
  set_if(t.lambda, v.number("train", "lambda"));
  to_int(v.integer("train", "neighborhood"), "train.neighborhood", t.neighborhood);
  if (auto s = v.string("train", "recon")) t.recon = as_config_error([&] { return parse_recon_kind(*s); });
  to_int(v.integer("train", "batch_size"), "train.batch_size", t.batch_size);
  if (auto s = v.integer("train", "seed")) {
    if (*s < 0) throw ConfigError("config key 'train.seed' must be >= 0");
    t.seed = static_cast<std::uint64_t>(*s);
  }
  set_if(t.adam.lr, v.number("train", "lr"));
  set_if(t.adam.beta1, v.number("train", "beta1"));
  set_if(t.adam.beta2, v.number("train", "beta2"));
  set_if(t.adam.eps, v.number("train", "eps"));
  set_if(t.sigma, v.number("train", "sigma"));
  set_if(t.freeze_discriminator, v.boolean("train", "freeze_discriminator"));
  set_if(rc.checkpoint_every, v.integer("train", "checkpoint_every"));
  rc.feature_weights = v.path("train", "feature_weights");

  rc.manifest = v.path("data", "manifest");
  to_int(v.integer("data", "synthetic_pairs"), "data.synthetic_pairs", rc.synthetic_pairs);
  if (auto s = v.integer("data", "synthetic_seed")) {
    if (*s < 0) throw ConfigError("config key 'data.synthetic_seed' must be >= 0");
    rc.synthetic_seed = static_cast<std::uint64_t>(*s);
  }
  if (auto p = v.path("output", "dir")) rc.out_dir = *p;
  if (rc.synthetic_pairs < 1) throw ConfigError("config key 'data.synthetic_pairs' must be >= 1");
  try {
    rc.generator.validate();
    rc.train.validate();
  } catch (const InvalidArgument& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return rc;
}

RunConfig load_run_config(const std::optional<fs::path>& path,
                          const std::optional<Variant>& variant_override) {
  if (!path) return parse_run_config("", variant_override);
  std::ifstream in(*path);
  if (!in) throw ConfigError("cannot open config " + path->string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str(), variant_override, path->parent_path());
}

RegionMask pose_foreground_mask(const Pose& pose, int width, int height) {
  const RegionSet regions = decompose_regions(pose, width, height);
  RegionMask out(PartId::Torso, width, height);
  for (const BodyRegion& r : regions.regions) {
    if (r.part == PartId::Torso || r.empty()) continue;
    const RegionMask m = region_mask(r, width, height);
    for (std::size_t p = 0; p < m.values.size(); ++p) out.values[p] |= m.values[p];
  }
  return out;
}

std::string heatmap_entry_name(double sigma) {
  std::ostringstream os;
  os << "heatmap/sigma" << std::setprecision(10) << sigma;
  return os.str();
}

// ---------------------------------------------------------------------------
// Commands

namespace {

struct Io {
  std::ostream& out;
  std::ostream& err;
};

PoseFile read_pose_for(const fs::path& path, int width, int height) {
  PoseFile pf = read_pose(path);
  if (pf.width != width || pf.height != height) {
    throw InvalidArgument(path.string() + ": pose is for a " + std::to_string(pf.width) + "x" +
                          std::to_string(pf.height) + " image, expected " + std::to_string(width) +
                          "x" + std::to_string(height));
  }
  return pf;
}

int cmd_heatmap(Io io, const fs::path& pose_path, const fs::path& out_path, double sigma,
                const std::string& kernel) {
  if (!(sigma > 0.0)) throw ConfigError("--sigma must be positive");
  HeatmapKernel k = HeatmapKernel::AsPrinted;
  if (kernel == "squared") k = HeatmapKernel::SquaredNorm;
  else if (kernel != "printed") throw ConfigError("--kernel must be 'printed' or 'squared'");
  const PoseFile pf = read_pose(pose_path);
  const Tensor hm = heatmap_from_pose(pf.pose, pf.width, pf.height, sigma, k);
  const int H = hm.height(), W = hm.width();
  std::vector<double> chw(hm.size());
  for (int j = 0; j < kNumJoints; ++j) {
    for (int y = 0; y < H; ++y) {
      for (int x = 0; x < W; ++x) {
        chw[(static_cast<std::size_t>(j) * H + y) * W + x] = hm(y, x, j);
      }
    }
  }
  TensorContainer c;
  c.add(ContainerEntry::from_doubles(heatmap_entry_name(sigma),
                                     {kNumJoints, static_cast<std::uint32_t>(H), static_cast<std::uint32_t>(W)},
                                     std::move(chw)));
  c.write(out_path);
  io.out << "wrote " << kNumJoints << "x" << H << "x" << W << " heat maps to " << out_path.string() << "\n";
  return kExitOk;
}

int cmd_warp(Io io, const fs::path& features_path, const std::string& entry, const fs::path& pose_a_path,
             const fs::path& pose_b_path, const fs::path& out_path) {
  const TensorContainer in = TensorContainer::read(features_path);
  if (in.entries().empty()) throw ParseError(features_path.string() + ": no entries");
  const ContainerEntry& e = entry.empty() ? in.entries().front() : in.get(entry);
  const Tensor F = e.to_tensor();
  if (F.batch() != 1) throw InvalidArgument("warp: feature entry '" + e.name + "' has batch " + std::to_string(F.batch()));
  const PoseFile a = read_pose(pose_a_path);
  const PoseFile b = read_pose(pose_b_path);
  if (a.width != b.width || a.height != b.height) {
    throw InvalidArgument("warp: pose files refer to different image sizes");
  }
  const RegionPair regions = region_pair(a.pose, b.pose, a.width, a.height);
  const WarpPlan plan = build_warp_plan(regions, a.width, a.height, F.width(), F.height());
  std::vector<std::string> empty;
  for (int h = 0; h < kNumParts; ++h) {
    const auto id = static_cast<PartId>(h);
    if (plan.parts[h].affine) continue;
    if (!regions.a[id].empty() && !regions.b[id].empty()) {
      throw DegenerateGeometry("warp: degenerate geometry for part '" + std::string(part_name(id)) + "'");
    }
    empty.emplace_back(part_name(id));
  }
  if (!empty.empty()) {
    io.err << "warning: empty parts:";
    for (const auto& n : empty) io.err << " " << n;
    io.err << "\n";
  }
  const MergeResult r = deform(F, plan);
  TensorContainer c;
  c.add(ContainerEntry::from_tensor("deformed", r.merged));
  c.write(out_path);
  io.out << "wrote " << r.merged.shape_string() << " to " << out_path.string() << "\n";
  return kExitOk;
}

FeatureExtractor make_features(const RunConfig& rc) {
  if (!rc.feature_weights) return FeatureExtractor::standin();
  const TensorContainer c = TensorContainer::read(*rc.feature_weights);
  nn::ParamStore ps;
  for (const auto& e : c.entries()) ps.add(e.name, e.to_tensor());
  return FeatureExtractor::from_params(std::move(ps));
}

TrainSample load_manifest_sample(const ManifestRow& row, const GeneratorConfig& g, double sigma) {
  Tensor x_a = read_png(row.image_a);
  Tensor x_b = read_png(row.image_b);
  const PoseFile pa = read_pose_for(row.pose_a, x_a.width(), x_a.height());
  const PoseFile pb = read_pose_for(row.pose_b, x_b.width(), x_b.height());
  TrainSample s = make_train_sample(std::move(x_a), pa.pose, std::move(x_b), pb.pose, g, sigma);
  if (row.mask_b) {
    RegionMask m = read_mask_png(*row.mask_b);
    if (m.width != g.image_width || m.height != g.image_height) {
      throw InvalidArgument(row.mask_b->string() + ": mask size does not match the image");
    }
    s.eval_mask = std::move(m);
  }
  return s;
}

std::vector<TrainSample> load_dataset(const RunConfig& rc, const GeneratorConfig& g, double sigma) {
  std::vector<TrainSample> data;
  if (rc.manifest) {
    for (const ManifestRow& row : read_manifest(*rc.manifest)) data.push_back(load_manifest_sample(row, g, sigma));
    if (data.empty()) throw InvalidArgument(rc.manifest->string() + ": manifest has no pairs");
    return data;
  }
  if (rc.synthetic_pairs < 1) throw ConfigError("data.synthetic_pairs must be >= 1");
  SyntheticFigureSpec spec;
  spec.seed = rc.synthetic_seed;
  spec.width = g.image_width;
  spec.height = g.image_height;
  for (int i = 0; i < rc.synthetic_pairs; ++i) {
    SyntheticPair p = synthetic_pair_at(spec, static_cast<std::uint64_t>(i));
    TrainSample s = make_train_sample(std::move(p.x_a), p.pose_a, std::move(p.x_b), p.pose_b, g, sigma);
    s.eval_mask = std::move(p.mask_b);
    data.push_back(std::move(s));
  }
  return data;
}

std::string csv_number(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

int cmd_train(Io io, RunConfig rc, const std::optional<fs::path>& resume) {
  fs::create_directories(rc.out_dir);
  TrainState state;
  if (resume) {
    state = load_checkpoint(*resume);
    state.train.iterations = rc.train.iterations;
    rc.generator = state.generator;
    rc.discriminator = state.discriminator;
  } else {
    as_config_error([&] {
      rc.generator.validate();
      rc.train.validate();
      return 0;
    });
    state = init_train_state(rc.generator, rc.train, rc.discriminator);
  }
  const std::vector<TrainSample> data = load_dataset(rc, state.generator, state.train.sigma);
  const FeatureExtractor features = make_features(rc);

  const fs::path loss_path = rc.out_dir / "losses.csv";
  const fs::path log_path = rc.out_dir / "train_log.csv";
  const bool append = resume && fs::exists(loss_path);
  std::ofstream losses(loss_path, append ? std::ios::app : std::ios::trunc);
  std::ofstream log(log_path, append ? std::ios::app : std::ios::trunc);
  if (!losses || !log) throw IoError("cannot write logs in " + rc.out_dir.string());
  if (!append) {
    losses << "iteration,loss_D,loss_G_adv,recon,loss_G\n";
    log << "iteration,loss_D,loss_G_adv,recon,wall_time\n";
  }
  const auto t0 = std::chrono::steady_clock::now();
  const fs::path ckpt = rc.out_dir / "checkpoint.dwt";
  try {
    train_loop(state, data, features, [&](const StepLosses& l) {
      const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      losses << l.iteration << "," << csv_number(l.loss_d) << "," << csv_number(l.loss_g_adv) << ","
             << csv_number(l.recon) << "," << csv_number(l.loss_g) << "\n";
      log << l.iteration << "," << csv_number(l.loss_d) << "," << csv_number(l.loss_g_adv) << ","
          << csv_number(l.recon) << "," << std::fixed << std::setprecision(3) << wall << std::defaultfloat
          << "\n";
      if (rc.checkpoint_every > 0 && state.iteration % rc.checkpoint_every == 0) save_checkpoint(ckpt, state);
    });
  } catch (const TrainingDiverged&) {
    losses.flush();
    log.flush();
    throw;
  }
  save_checkpoint(ckpt, state);
  io.out << "trained " << to_string(rc.variant) << " to iteration " << state.iteration << "; checkpoint "
         << ckpt.string() << "\n";
  return kExitOk;
}

Tensor generate_one(const TrainState& st, const fs::path& image_a, const fs::path& pose_a,
                    const fs::path& pose_b) {
  Tensor x_a = read_png(image_a);
  const PoseFile pa = read_pose_for(pose_a, x_a.width(), x_a.height());
  const PoseFile pb = read_pose_for(pose_b, x_a.width(), x_a.height());
  Tensor x_b = x_a;
  const TrainSample s = make_train_sample(std::move(x_a), pa.pose, std::move(x_b), pb.pose, st.generator,
                                          st.train.sigma);
  return generate(st, s);
}

int cmd_generate(Io io, const fs::path& checkpoint, const std::optional<fs::path>& manifest,
                 const std::string& image_a, const std::string& pose_a, const std::string& pose_b,
                 const fs::path& out, const fs::path& out_dir) {
  const TrainState st = load_checkpoint(checkpoint);
  if (manifest) {
    fs::create_directories(out_dir);
    const std::vector<ManifestRow> rows = read_manifest(*manifest);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      std::ostringstream name;
      name << "generated_" << std::setw(4) << std::setfill('0') << i << ".png";
      write_png(out_dir / name.str(), generate_one(st, rows[i].image_a, rows[i].pose_a, rows[i].pose_b));
    }
    io.out << "wrote " << rows.size() << " images to " << out_dir.string() << "\n";
    return kExitOk;
  }
  if (image_a.empty() || pose_a.empty() || pose_b.empty() || out.empty()) {
    throw ConfigError("generate needs --image-a, --pose-a, --pose-b and --out (or --manifest)");
  }
  write_png(out, generate_one(st, image_a, pose_a, pose_b));
  io.out << "wrote " << out.string() << "\n";
  return kExitOk;
}

int cmd_eval(Io io, const fs::path& manifest, const std::optional<fs::path>& checkpoint, const fs::path& out) {
  std::optional<TrainState> st;
  if (checkpoint) st = load_checkpoint(*checkpoint);
  const std::vector<ManifestRow> rows = read_manifest(manifest);
  std::ofstream csv(out, std::ios::trunc);
  if (!csv) throw IoError("cannot write " + out.string());
  csv << "pair,ssim,mask_ssim\n";
  double sum_s = 0.0, sum_m = 0.0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const ManifestRow& r = rows[i];
    const Tensor x_b = read_png(r.image_b);
    const PoseFile pb = read_pose_for(r.pose_b, x_b.width(), x_b.height());
    const Tensor x_hat = st ? generate_one(*st, r.image_a, r.pose_a, r.pose_b) : read_png(r.image_a);
    if (!x_hat.same_shape(x_b)) {
      throw InvalidArgument("eval: pair " + std::to_string(i) + " images differ in size");
    }
    const RegionMask mask = r.mask_b ? read_mask_png(*r.mask_b) : pose_foreground_mask(pb.pose, pb.width, pb.height);
    const double s = ssim(x_hat, x_b);
    const double m = mask_ssim(x_hat, x_b, mask);
    sum_s += s;
    sum_m += m;
    csv << i << "," << csv_number(s) << "," << csv_number(m) << "\n";
  }
  const double n = rows.empty() ? 1.0 : static_cast<double>(rows.size());
  csv << "mean," << csv_number(sum_s / n) << "," << csv_number(sum_m / n) << "\n";
  io.out << "pairs " << rows.size() << "  ssim " << sum_s / n << "  mask-ssim " << sum_m / n << "\n";
  return kExitOk;
}

void apply_synth_spec(const std::string& toml_text, SyntheticFigureSpec& spec, int& pairs) {
  toml::table tbl;
  try {
    tbl = toml::parse(toml_text);
  } catch (const toml::parse_error& e) {
    throw ConfigError(std::string("synth spec: ") + std::string(e.description()));
  }
  std::map<std::string, double*> reals{
      {"head_radius", &spec.head_radius},   {"torso_length", &spec.torso_length},
      {"shoulder_half_width", &spec.shoulder_half_width}, {"hip_half_width", &spec.hip_half_width},
      {"upper_arm", &spec.upper_arm},       {"lower_arm", &spec.lower_arm},
      {"upper_leg", &spec.upper_leg},       {"lower_leg", &spec.lower_leg},
      {"limb_width", &spec.limb_width},     {"margin", &spec.margin},
      {"max_arm_swing", &spec.max_arm_swing}, {"max_elbow_bend", &spec.max_elbow_bend},
      {"max_leg_swing", &spec.max_leg_swing}, {"max_knee_bend", &spec.max_knee_bend},
      {"max_lean", &spec.max_lean},         {"occlusion_probability", &spec.occlusion_probability}};
  std::map<std::string, int*> ints{{"width", &spec.width}, {"height", &spec.height}, {"pairs", &pairs}};
  for (auto&& [k, node] : tbl) {
    const std::string key(k.str());
    if (auto it = reals.find(key); it != reals.end()) {
      if (!node.is_number()) throw ConfigError("synth key '" + key + "' must be a number");
      *it->second = node.value<double>().value();
    } else if (auto jt = ints.find(key); jt != ints.end()) {
      auto v = node.value_exact<std::int64_t>();
      if (!v) throw ConfigError("synth key '" + key + "' must be an integer");
      *jt->second = static_cast<int>(*v);
    } else if (key == "seed") {
      auto v = node.value_exact<std::int64_t>();
      if (!v || *v < 0) throw ConfigError("synth key 'seed' must be a non-negative integer");
      spec.seed = static_cast<std::uint64_t>(*v);
    } else if (key == "stripes") {
      auto v = node.value_exact<bool>();
      if (!v) throw ConfigError("synth key 'stripes' must be true or false");
      spec.stripes = *v;
    } else {
      throw ConfigError("unknown synth key '" + key + "'");
    }
  }
}

int cmd_synth(Io io, const std::optional<fs::path>& spec_path, const fs::path& out_dir,
              std::optional<int> pairs_flag, std::optional<std::uint64_t> seed_flag,
              std::optional<int> width_flag, std::optional<int> height_flag) {
  SyntheticFigureSpec spec;
  int pairs = 64;
  if (spec_path) {
    std::ifstream in(*spec_path);
    if (!in) throw ConfigError("cannot open synth spec " + spec_path->string());
    std::stringstream ss;
    ss << in.rdbuf();
    apply_synth_spec(ss.str(), spec, pairs);
  }
  if (pairs_flag) pairs = *pairs_flag;
  if (seed_flag) spec.seed = *seed_flag;
  if (width_flag) spec.width = *width_flag;
  if (height_flag) spec.height = *height_flag;
  if (pairs < 1) throw ConfigError("--pairs must be >= 1");
  as_config_error([&] {
    spec.validate();
    return 0;
  });
  fs::create_directories(out_dir);
  std::vector<ManifestRow> rows;
  for (int i = 0; i < pairs; ++i) {
    const SyntheticPair p = synthetic_pair_at(spec, static_cast<std::uint64_t>(i));
    std::ostringstream stem;
    stem << std::setw(4) << std::setfill('0') << i;
    const std::string s = stem.str();
    ManifestRow r{"a_" + s + ".png", "a_" + s + ".json", "b_" + s + ".png", "b_" + s + ".json",
                  fs::path("mask_b_" + s + ".png")};
    write_png(out_dir / r.image_a, p.x_a);
    write_png(out_dir / r.image_b, p.x_b);
    write_pose(out_dir / r.pose_a, {spec.width, spec.height, p.pose_a});
    write_pose(out_dir / r.pose_b, {spec.width, spec.height, p.pose_b});
    write_mask_png(out_dir / *r.mask_b, p.mask_b);
    rows.push_back(std::move(r));
  }
  write_manifest(out_dir / "manifest.csv", rows);
  io.out << "wrote " << pairs << " pairs and " << (out_dir / "manifest.csv").string() << "\n";
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Io io{out, err};
  CLI::App app{"Pose-conditioned person image generation with deformable skip connections", "deformwarp"};
  app.require_subcommand(1);

  std::string pose, out_path, kernel = "printed", features, entry, pose_a, pose_b, image_a;
  double sigma = kDefaultSigma;
  auto* heat = app.add_subcommand("heatmap", "Render per-joint heat maps of a pose file");
  heat->add_option("--pose", pose, "Pose JSON")->required();
  heat->add_option("--out", out_path, "Output tensor container")->required();
  heat->add_option("--sigma", sigma, "Heat-map spread in pixels")->capture_default_str();
  heat->add_option("--kernel", kernel, "printed | squared")->capture_default_str();

  auto* warp = app.add_subcommand("warp", "Deform a stored feature map from pose A to pose B");
  warp->add_option("--features", features, "Tensor container with a (1,H,W,C) map")->required();
  warp->add_option("--entry", entry, "Entry name (default: first)");
  warp->add_option("--pose-a", pose_a)->required();
  warp->add_option("--pose-b", pose_b)->required();
  warp->add_option("--out", out_path)->required();

  std::string config, variant, manifest, out_dir, resume, checkpoint, recon, skip;
  std::optional<long> iters, checkpoint_every;
  std::optional<std::int64_t> seed;
  std::optional<int> batch_size, neighborhood, pairs, width, height;
  std::optional<double> lambda, lr;
  bool freeze = false;
  auto* train = app.add_subcommand("train", "Train a generator/discriminator pair");
  train->add_option("--config", config, "TOML run configuration");
  train->add_option("--variant", variant, "baseline | dsc | percloss | full");
  train->add_option("--iters", iters, "Total iterations");
  train->add_option("--seed", seed);
  train->add_option("--batch-size", batch_size);
  train->add_option("--lambda", lambda);
  train->add_option("--lr", lr);
  train->add_option("--neighborhood", neighborhood);
  train->add_option("--recon", recon, "l1 | perceptual | nn");
  train->add_option("--skip", skip, "none | plain | deformable");
  train->add_option("--manifest", manifest, "Pair manifest CSV (default: synthetic data)");
  train->add_option("--out-dir", out_dir);
  train->add_option("--resume", resume, "Checkpoint to continue from");
  train->add_option("--checkpoint-every", checkpoint_every);
  train->add_flag("--freeze-discriminator", freeze);

  auto* gen = app.add_subcommand("generate", "Render x_a in pose B with a trained generator");
  gen->add_option("--checkpoint", checkpoint)->required();
  gen->add_option("--image-a", image_a);
  gen->add_option("--pose-a", pose_a);
  gen->add_option("--pose-b", pose_b);
  gen->add_option("--out", out_path, "Output PNG");
  gen->add_option("--manifest", manifest, "Generate one PNG per manifest row");
  gen->add_option("--out-dir", out_dir, "Directory for manifest mode");

  auto* eval = app.add_subcommand("eval", "SSIM and mask-SSIM over a manifest");
  eval->add_option("--manifest", manifest)->required();
  eval->add_option("--checkpoint", checkpoint, "Without it image_a is scored against image_b");
  eval->add_option("--out", out_path, "Per-pair CSV")->required();

  std::string spec;
  std::optional<std::uint64_t> synth_seed;
  auto* synth = app.add_subcommand("synth", "Write a synthetic stick-figure pair dataset");
  synth->add_option("--spec", spec, "TOML figure spec");
  synth->add_option("--out-dir", out_dir)->required();
  synth->add_option("--pairs", pairs);
  synth->add_option("--seed", synth_seed);
  synth->add_option("--width", width);
  synth->add_option("--height", height);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kExitUsage;
  }

  try {
    if (*heat) return cmd_heatmap(io, pose, out_path, sigma, kernel);
    if (*warp) return cmd_warp(io, features, entry, pose_a, pose_b, out_path);
    if (*train) {
      std::optional<Variant> v;
      if (!variant.empty()) v = as_config_error([&] { return parse_variant(variant); });
      RunConfig rc = load_run_config(config.empty() ? std::nullopt : std::optional<fs::path>(config), v);
      if (iters) rc.train.iterations = *iters;
      if (seed) {
        if (*seed < 0) throw ConfigError("--seed must be >= 0");
        rc.train.seed = static_cast<std::uint64_t>(*seed);
      }
      if (batch_size) rc.train.batch_size = *batch_size;
      if (lambda) rc.train.lambda = *lambda;
      if (lr) rc.train.adam.lr = *lr;
      if (neighborhood) rc.train.neighborhood = *neighborhood;
      if (!recon.empty()) rc.train.recon = as_config_error([&] { return parse_recon_kind(recon); });
      if (!skip.empty()) rc.generator.skip = as_config_error([&] { return parse_skip_mode(skip); });
      if (!manifest.empty()) rc.manifest = manifest;
      if (!out_dir.empty()) rc.out_dir = out_dir;
      if (checkpoint_every) rc.checkpoint_every = *checkpoint_every;
      if (freeze) rc.train.freeze_discriminator = true;
      as_config_error([&] {
        NeighborhoodSpec check(rc.train.neighborhood);
        rc.train.validate();
        return 0;
      });
      return cmd_train(io, rc, resume.empty() ? std::nullopt : std::optional<fs::path>(resume));
    }
    if (*gen) {
      return cmd_generate(io, checkpoint, manifest.empty() ? std::nullopt : std::optional<fs::path>(manifest),
                          image_a, pose_a, pose_b, out_path, out_dir.empty() ? fs::path("generated") : fs::path(out_dir));
    }
    if (*eval) {
      return cmd_eval(io, manifest, checkpoint.empty() ? std::nullopt : std::optional<fs::path>(checkpoint),
                      out_path);
    }
    if (*synth) {
      return cmd_synth(io, spec.empty() ? std::nullopt : std::optional<fs::path>(spec), out_dir, pairs,
                       synth_seed, width, height);
    }
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const TrainingDiverged& e) {
    err << "error: " << e.what() << "\n";
    return kExitDiverged;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitUsage;
}

}  // namespace deformwarp
