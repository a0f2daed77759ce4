#include "deformwarp/checkpoint.hpp"

#include <cmath>

#include "deformwarp/error.hpp"

namespace deformwarp {
namespace {

void put_params(TensorContainer& c, const std::string& prefix, const nn::ParamStore& ps) {
  for (const auto& [name, value] : ps.values()) {
    const nn::AdamState& a = ps.adam(name);
    c.add(ContainerEntry::from_tensor(prefix + "/param/" + name, value));
    c.add(ContainerEntry::from_tensor(prefix + "/adam_m/" + name, a.m));
    c.add(ContainerEntry::from_tensor(prefix + "/adam_v/" + name, a.v));
    c.add(ContainerEntry::scalar(prefix + "/adam_step/" + name, static_cast<double>(a.step)));
  }
}

void put_list(TensorContainer& c, const std::string& name, const std::vector<int>& v) {
  const auto n = static_cast<std::uint32_t>(v.size());
  c.add(ContainerEntry::from_doubles(name, {n}, std::vector<double>(v.begin(), v.end())));
}

double scalar(const TensorContainer& c, const std::string& name) {
  const ContainerEntry& e = c.get(name);
  if (e.element_count() != 1) throw IncompatibleCheckpoint("entry '" + name + "' is not a scalar");
  return e.as_doubles()[0];
}

long integer(const TensorContainer& c, const std::string& name) {
  const double v = scalar(c, name);
  if (!std::isfinite(v) || v != std::floor(v)) {
    throw IncompatibleCheckpoint("entry '" + name + "' is not an integer");
  }
  return static_cast<long>(v);
}

std::vector<int> list(const TensorContainer& c, const std::string& name) {
  std::vector<int> out;
  for (double v : c.get(name).as_doubles()) out.push_back(static_cast<int>(v));
  return out;
}

void take_params(const TensorContainer& c, const std::string& prefix, nn::ParamStore& ps) {
  std::size_t expected = 0;
  for (const auto& [name, value] : ps.values()) {
    ++expected;
    const Tensor p = c.get(prefix + "/param/" + name).to_tensor();
    const Tensor m = c.get(prefix + "/adam_m/" + name).to_tensor();
    const Tensor v = c.get(prefix + "/adam_v/" + name).to_tensor();
    if (!p.same_shape(value) || !m.same_shape(value) || !v.same_shape(value)) {
      throw IncompatibleCheckpoint("parameter '" + prefix + "/" + name + "' has shape " +
                                   p.shape_string() + ", model expects " + value.shape_string());
    }
    nn::AdamState& a = ps.adam_mut(name);
    a.m = m;
    a.v = v;
    a.step = integer(c, prefix + "/adam_step/" + name);
    ps.get_mut(name) = p;
  }
  std::size_t stored = 0;
  for (const auto& e : c.entries()) {
    if (e.name.rfind(prefix + "/param/", 0) == 0) ++stored;
  }
  if (stored != expected) {
    throw IncompatibleCheckpoint(prefix + ": checkpoint holds " + std::to_string(stored) +
                                 " parameters, model has " + std::to_string(expected));
  }
}

}  // namespace

TensorContainer checkpoint_container(const TrainState& st) {
  TensorContainer c;
  c.add(ContainerEntry::scalar("meta/version", kCheckpointVersion));
  c.add(ContainerEntry::scalar("meta/iteration", static_cast<double>(st.iteration)));

  const GeneratorConfig& g = st.generator;
  c.add(ContainerEntry::scalar("config/generator/image_height", g.image_height));
  c.add(ContainerEntry::scalar("config/generator/image_width", g.image_width));
  put_list(c, "config/generator/encoder_filters", g.encoder_filters);
  put_list(c, "config/generator/decoder_filters", g.decoder_filters);
  c.add(ContainerEntry::scalar("config/generator/decoder_dropout_blocks", g.decoder_dropout_blocks));
  c.add(ContainerEntry::scalar("config/generator/channel_divisor", g.channel_divisor));
  c.add(ContainerEntry::scalar("config/generator/extra_block", g.extra_block ? 1 : 0));
  c.add(ContainerEntry::scalar("config/generator/two_stream", g.two_stream ? 1 : 0));
  c.add(ContainerEntry::scalar("config/generator/skip", static_cast<double>(g.skip)));

  put_list(c, "config/discriminator/filters", st.discriminator.filters);
  c.add(ContainerEntry::scalar("config/discriminator/channel_divisor", st.discriminator.channel_divisor));

  const TrainConfig& t = st.train;
  c.add(ContainerEntry::scalar("config/train/iterations", static_cast<double>(t.iterations)));
  c.add(ContainerEntry::scalar("config/train/lambda", t.lambda));
  c.add(ContainerEntry::scalar("config/train/neighborhood", t.neighborhood));
  c.add(ContainerEntry::scalar("config/train/recon", static_cast<double>(t.recon)));
  c.add(ContainerEntry::scalar("config/train/lr", t.adam.lr));
  c.add(ContainerEntry::scalar("config/train/beta1", t.adam.beta1));
  c.add(ContainerEntry::scalar("config/train/beta2", t.adam.beta2));
  c.add(ContainerEntry::scalar("config/train/eps", t.adam.eps));
  c.add(ContainerEntry::scalar("config/train/batch_size", t.batch_size));
  c.add(ContainerEntry::scalar("config/train/seed_hi", static_cast<double>(t.seed >> 32)));
  c.add(ContainerEntry::scalar("config/train/seed_lo", static_cast<double>(t.seed & 0xffffffffULL)));
  c.add(ContainerEntry::scalar("config/train/sigma", t.sigma));
  c.add(ContainerEntry::scalar("config/train/freeze_discriminator", t.freeze_discriminator ? 1 : 0));

  put_params(c, "G", st.g_params);
  put_params(c, "D", st.d_params);
  return c;
}

TrainState state_from_container(const TensorContainer& c) {
  try {
    if (!c.contains("meta/version") || scalar(c, "meta/version") != kCheckpointVersion) {
      throw IncompatibleCheckpoint("unsupported checkpoint version");
    }
    GeneratorConfig g;
    g.image_height = static_cast<int>(integer(c, "config/generator/image_height"));
    g.image_width = static_cast<int>(integer(c, "config/generator/image_width"));
    g.encoder_filters = list(c, "config/generator/encoder_filters");
    g.decoder_filters = list(c, "config/generator/decoder_filters");
    g.decoder_dropout_blocks = static_cast<int>(integer(c, "config/generator/decoder_dropout_blocks"));
    g.channel_divisor = static_cast<int>(integer(c, "config/generator/channel_divisor"));
    g.extra_block = integer(c, "config/generator/extra_block") != 0;
    g.two_stream = integer(c, "config/generator/two_stream") != 0;
    const long skip = integer(c, "config/generator/skip");
    if (skip < 0 || skip > 2) throw IncompatibleCheckpoint("unknown skip mode");
    g.skip = static_cast<SkipMode>(skip);

    DiscriminatorConfig d;
    d.filters = list(c, "config/discriminator/filters");
    d.channel_divisor = static_cast<int>(integer(c, "config/discriminator/channel_divisor"));

    TrainConfig t;
    t.iterations = integer(c, "config/train/iterations");
    t.lambda = scalar(c, "config/train/lambda");
    t.neighborhood = static_cast<int>(integer(c, "config/train/neighborhood"));
    const long recon = integer(c, "config/train/recon");
    if (recon < 0 || recon > 2) throw IncompatibleCheckpoint("unknown reconstruction loss");
    t.recon = static_cast<ReconKind>(recon);
    t.adam.lr = scalar(c, "config/train/lr");
    t.adam.beta1 = scalar(c, "config/train/beta1");
    t.adam.beta2 = scalar(c, "config/train/beta2");
    t.adam.eps = scalar(c, "config/train/eps");
    t.batch_size = static_cast<int>(integer(c, "config/train/batch_size"));
    t.seed = (static_cast<std::uint64_t>(integer(c, "config/train/seed_hi")) << 32) |
             static_cast<std::uint64_t>(integer(c, "config/train/seed_lo"));
    t.sigma = scalar(c, "config/train/sigma");
    t.freeze_discriminator = integer(c, "config/train/freeze_discriminator") != 0;

    TrainState st = init_train_state(g, t, d);
    take_params(c, "G", st.g_params);
    take_params(c, "D", st.d_params);
    st.iteration = integer(c, "meta/iteration");
    return st;
  } catch (const IncompatibleCheckpoint&) {
    throw;
  } catch (const Error& e) {
    throw IncompatibleCheckpoint(std::string("checkpoint does not match this model: ") + e.what());
  }
}

void save_checkpoint(const std::filesystem::path& path, const TrainState& state) {
  checkpoint_container(state).write(path);
}

TrainState load_checkpoint(const std::filesystem::path& path) {
  TensorContainer c;
  try {
    c = TensorContainer::read(path);
  } catch (const Error& e) {
    throw IncompatibleCheckpoint(std::string("cannot load checkpoint: ") + e.what());
  }
  return state_from_container(c);
}

}  // namespace deformwarp
