#include "vmi/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

#include "vmi/rng.hpp"

namespace vmi {

namespace {

constexpr char kMagic[7] = {'V', 'M', 'I', 'C', 'K', '1', '\0'};

constexpr const char* kTagFamily = "vmi.family";
constexpr const char* kTagClassifier = "vmi.classifier";
constexpr const char* kTagDiscriminator = "vmi.discriminator";
constexpr const char* kTagLinearGenerator = "vmi.generator.linear";
constexpr const char* kTagLayeredGenerator = "vmi.generator.layered";

void write_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

void write_u64(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

void write_string(std::ostream& os, const std::string& s) {
  write_u32(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::uint32_t read_u32(std::istream& is) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) throw std::runtime_error("checkpoint: truncated");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

std::uint64_t read_u64(std::istream& is) {
  unsigned char b[8];
  if (!is.read(reinterpret_cast<char*>(b), 8)) throw std::runtime_error("checkpoint: truncated");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

std::string read_string(std::istream& is) {
  std::uint32_t n = read_u32(is);
  if (n > (1u << 20)) throw std::runtime_error("checkpoint: unreasonable string length");
  std::string s(n, '\0');
  if (!is.read(s.data(), n)) throw std::runtime_error("checkpoint: truncated");
  return s;
}

void require_tag(const Checkpoint& ck, const std::string& expected) {
  if (ck.type_tag != expected) {
    throw std::runtime_error("checkpoint: type tag mismatch (expected '" + expected +
                             "', found '" + ck.type_tag + "')");
  }
}

std::vector<std::size_t> to_sizes(const std::vector<double>& v) {
  std::vector<std::size_t> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = static_cast<std::size_t>(v[i]);
  return out;
}

// Dense stacks serialize as an "arch" block of (in, out) pairs plus the
// parameter blocks in params() order.
Checkpoint dense_checkpoint(const std::string& tag, const std::vector<DenseLayer>& layers) {
  Checkpoint ck;
  ck.type_tag = tag;
  CheckpointBlock arch;
  arch.name = "arch";
  for (const DenseLayer& l : layers) {
    arch.data.push_back(static_cast<double>(l.in));
    arch.data.push_back(static_cast<double>(l.out));
  }
  ck.blocks.push_back(std::move(arch));
  for (std::size_t i = 0; i < layers.size(); ++i) {
    ck.blocks.push_back({"w" + std::to_string(i), layers[i].w});
    ck.blocks.push_back({"b" + std::to_string(i), layers[i].b});
  }
  return ck;
}

std::vector<DenseLayer> dense_from_checkpoint(const Checkpoint& ck) {
  std::vector<std::size_t> arch = to_sizes(ck.block("arch").data);
  if (arch.empty() || arch.size() % 2 != 0) {
    throw std::runtime_error("checkpoint: malformed dense arch block");
  }
  std::vector<DenseLayer> layers(arch.size() / 2);
  for (std::size_t i = 0; i < layers.size(); ++i) {
    layers[i].in = arch[2 * i];
    layers[i].out = arch[2 * i + 1];
    layers[i].w = ck.block("w" + std::to_string(i)).data;
    layers[i].b = ck.block("b" + std::to_string(i)).data;
    if (layers[i].w.size() != layers[i].in * layers[i].out ||
        layers[i].b.size() != layers[i].out) {
      throw std::runtime_error("checkpoint: dense layer size mismatch");
    }
  }
  return layers;
}

}  // namespace

const CheckpointBlock& Checkpoint::block(const std::string& name) const {
  for (const CheckpointBlock& b : blocks) {
    if (b.name == name) return b;
  }
  throw std::runtime_error("checkpoint: missing block '" + name + "'");
}

void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("checkpoint: cannot open " + path.string() + " for writing");
  os.write(kMagic, sizeof(kMagic));
  write_string(os, ck.type_tag);
  write_u32(os, static_cast<std::uint32_t>(ck.blocks.size()));
  for (const CheckpointBlock& b : ck.blocks) {
    write_string(os, b.name);
    write_u64(os, b.data.size());
    os.write(reinterpret_cast<const char*>(b.data.data()),
             static_cast<std::streamsize>(b.data.size() * sizeof(double)));
  }
  if (!os) throw std::runtime_error("checkpoint: write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open " + path.string());
  char magic[sizeof(kMagic)];
  if (!is.read(magic, sizeof(magic))) throw std::runtime_error("checkpoint: truncated");
  if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw std::runtime_error("checkpoint: bad magic in " + path.string());
  }
  Checkpoint ck;
  ck.type_tag = read_string(is);
  std::uint32_t count = read_u32(is);
  ck.blocks.resize(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    ck.blocks[i].name = read_string(is);
    std::uint64_t n = read_u64(is);
    if (n > (1ull << 28)) throw std::runtime_error("checkpoint: unreasonable block size");
    ck.blocks[i].data.resize(n);
    if (!is.read(reinterpret_cast<char*>(ck.blocks[i].data.data()),
                 static_cast<std::streamsize>(n * sizeof(double)))) {
      throw std::runtime_error("checkpoint: truncated");
    }
  }
  return ck;
}

// ---------------------------------------------------------------------------
// Families

void save_family(const LayeredVariational& family, const std::filesystem::path& path) {
  Checkpoint ck;
  ck.type_tag = kTagFamily;
  CheckpointBlock arch;
  arch.name = "arch";
  arch.data.push_back(static_cast<double>(family.num_layers()));
  for (const Family& f : family.layers) {
    if (const auto* g = std::get_if<GaussianFamily>(&f)) {
      arch.data.push_back(0.0);
      arch.data.push_back(static_cast<double>(g->dim()));
      arch.data.push_back(0.0);
      arch.data.push_back(0.0);
    } else {
      const auto& flow = std::get<CouplingFlow>(f);
      arch.data.push_back(1.0);
      arch.data.push_back(static_cast<double>(flow.dim()));
      arch.data.push_back(static_cast<double>(flow.n_blocks()));
      arch.data.push_back(static_cast<double>(flow.blocks().front().conditioner.hidden));
    }
  }
  ck.blocks.push_back(std::move(arch));

  for (std::size_t l = 0; l < family.num_layers(); ++l) {
    std::string prefix = "layer" + std::to_string(l) + ".";
    const Family& f = family.layers[l];
    if (const auto* g = std::get_if<GaussianFamily>(&f)) {
      ck.blocks.push_back({prefix + "mean", g->mean()});
      ck.blocks.push_back({prefix + "log_std", g->log_std()});
    } else {
      const auto& flow = std::get<CouplingFlow>(f);
      for (std::size_t bi = 0; bi < flow.n_blocks(); ++bi) {
        const CouplingFlow::Block& b = flow.blocks()[bi];
        std::string bp = prefix + "block" + std::to_string(bi) + ".";
        std::vector<double> perm(b.perm.begin(), b.perm.end());
        ck.blocks.push_back({bp + "perm", std::move(perm)});
        ck.blocks.push_back({bp + "w1", b.conditioner.w1});
        ck.blocks.push_back({bp + "b1", b.conditioner.b1});
        ck.blocks.push_back({bp + "w2", b.conditioner.w2});
        ck.blocks.push_back({bp + "b2", b.conditioner.b2});
        ck.blocks.push_back({bp + "w3", b.conditioner.w3});
        ck.blocks.push_back({bp + "b3", b.conditioner.b3});
      }
    }
  }
  save_checkpoint(ck, path);
}

LayeredVariational load_family(const std::filesystem::path& path) {
  Checkpoint ck = load_checkpoint(path);
  require_tag(ck, kTagFamily);
  const std::vector<double>& arch = ck.block("arch").data;
  if (arch.empty()) throw std::runtime_error("checkpoint: empty family arch");
  std::size_t layers = static_cast<std::size_t>(arch[0]);
  if (arch.size() != 1 + 4 * layers) throw std::runtime_error("checkpoint: malformed family arch");

  LayeredVariational family;
  for (std::size_t l = 0; l < layers; ++l) {
    int kind = static_cast<int>(arch[1 + 4 * l]);
    std::size_t dim = static_cast<std::size_t>(arch[1 + 4 * l + 1]);
    std::string prefix = "layer" + std::to_string(l) + ".";
    if (kind == 0) {
      family.layers.emplace_back(GaussianFamily(ck.block(prefix + "mean").data,
                                                ck.block(prefix + "log_std").data));
    } else {
      std::size_t n_blocks = static_cast<std::size_t>(arch[1 + 4 * l + 2]);
      std::size_t hidden = static_cast<std::size_t>(arch[1 + 4 * l + 3]);
      std::vector<CouplingFlow::Block> blocks(n_blocks);
      for (std::size_t bi = 0; bi < n_blocks; ++bi) {
        std::string bp = prefix + "block" + std::to_string(bi) + ".";
        CouplingFlow::Block& b = blocks[bi];
        b.perm = to_sizes(ck.block(bp + "perm").data);
        b.conditioner.in_dim = dim / 2;
        b.conditioner.hidden = hidden;
        b.conditioner.w1 = ck.block(bp + "w1").data;
        b.conditioner.b1 = ck.block(bp + "b1").data;
        b.conditioner.w2 = ck.block(bp + "w2").data;
        b.conditioner.b2 = ck.block(bp + "b2").data;
        b.conditioner.w3 = ck.block(bp + "w3").data;
        b.conditioner.b3 = ck.block(bp + "b3").data;
      }
      family.layers.emplace_back(CouplingFlow(dim, std::move(blocks)));
    }
  }
  return family;
}

// ---------------------------------------------------------------------------
// Classifier / discriminator

void save_classifier(const Classifier& c, const std::filesystem::path& path) {
  save_checkpoint(dense_checkpoint(kTagClassifier, c.layers()), path);
}

Classifier load_classifier(const std::filesystem::path& path) {
  Checkpoint ck = load_checkpoint(path);
  require_tag(ck, kTagClassifier);
  return Classifier(dense_from_checkpoint(ck));
}

void save_discriminator(const Discriminator& d, const std::filesystem::path& path) {
  save_checkpoint(dense_checkpoint(kTagDiscriminator, d.layers()), path);
}

Discriminator load_discriminator(const std::filesystem::path& path) {
  Checkpoint ck = load_checkpoint(path);
  require_tag(ck, kTagDiscriminator);
  return Discriminator(dense_from_checkpoint(ck));
}

// ---------------------------------------------------------------------------
// Generators

void save_generator(const Generator& g, const std::filesystem::path& path) {
  if (const auto* lin = dynamic_cast<const LinearGaussianGenerator*>(&g)) {
    Checkpoint ck;
    ck.type_tag = kTagLinearGenerator;
    ck.blocks.push_back({"arch",
                         {static_cast<double>(lin->output_dim()),
                          static_cast<double>(lin->code_dim()), lin->noise_sigma()}});
    ck.blocks.push_back({"a", {lin->a().data().begin(), lin->a().data().end()}});
    ck.blocks.push_back({"bias", lin->bias()});
    save_checkpoint(ck, path);
    return;
  }
  const auto* layered = dynamic_cast<const LayeredGenerator*>(&g);
  if (!layered) throw std::invalid_argument("save_generator: unknown generator type");
  Checkpoint ck;
  ck.type_tag = kTagLayeredGenerator;
  const LayeredGenerator::Config& cfg = layered->config();
  CheckpointBlock arch;
  arch.name = "arch";
  arch.data = {static_cast<double>(cfg.code_dim),  static_cast<double>(cfg.style_dim),
               static_cast<double>(cfg.hidden_dim), static_cast<double>(cfg.output_dim),
               static_cast<double>(cfg.layers),     cfg.sigma,
               static_cast<double>(cfg.mapping_hidden.size())};
  for (std::size_t h : cfg.mapping_hidden) arch.data.push_back(static_cast<double>(h));
  ck.blocks.push_back(std::move(arch));
  for (ParamCRef p : layered->params()) ck.blocks.push_back({p.name, *p.data});
  save_checkpoint(ck, path);
}

std::shared_ptr<Generator> load_generator(const std::filesystem::path& path) {
  Checkpoint ck = load_checkpoint(path);
  if (ck.type_tag == kTagLinearGenerator) {
    const std::vector<double>& arch = ck.block("arch").data;
    if (arch.size() != 3) throw std::runtime_error("checkpoint: malformed linear generator arch");
    std::size_t d = static_cast<std::size_t>(arch[0]);
    std::size_t k = static_cast<std::size_t>(arch[1]);
    Tensor a({d, k}, ck.block("a").data);
    return std::make_shared<LinearGaussianGenerator>(std::move(a), ck.block("bias").data, arch[2]);
  }
  if (ck.type_tag != kTagLayeredGenerator) {
    throw std::runtime_error("checkpoint: type tag mismatch (expected a generator, found '" +
                             ck.type_tag + "')");
  }
  const std::vector<double>& arch = ck.block("arch").data;
  if (arch.size() < 7) throw std::runtime_error("checkpoint: malformed layered generator arch");
  LayeredGenerator::Config cfg;
  cfg.code_dim = static_cast<std::size_t>(arch[0]);
  cfg.style_dim = static_cast<std::size_t>(arch[1]);
  cfg.hidden_dim = static_cast<std::size_t>(arch[2]);
  cfg.output_dim = static_cast<std::size_t>(arch[3]);
  cfg.layers = static_cast<std::size_t>(arch[4]);
  cfg.sigma = arch[5];
  std::size_t mh = static_cast<std::size_t>(arch[6]);
  if (arch.size() != 7 + mh) throw std::runtime_error("checkpoint: malformed layered generator arch");
  cfg.mapping_hidden.clear();
  for (std::size_t i = 0; i < mh; ++i) cfg.mapping_hidden.push_back(static_cast<std::size_t>(arch[7 + i]));

  RngStream dummy(0);
  auto gen = std::make_shared<LayeredGenerator>(cfg, dummy);
  for (ParamRef p : gen->mutable_params()) {
    const CheckpointBlock& b = ck.block(p.name);
    if (b.data.size() != p.data->size()) {
      throw std::runtime_error("checkpoint: block '" + p.name + "' size mismatch");
    }
    *p.data = b.data;
  }
  return gen;
}

}  // namespace vmi
