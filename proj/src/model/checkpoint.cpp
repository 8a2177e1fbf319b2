#include "distillkit/model/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

#include "distillkit/errors.hpp"

namespace distillkit::model {

namespace {

constexpr char kMagic[8] = {'D', 'K', 'C', 'K', 'P', 'T', '\0', '\0'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::string& out, T value) {
  char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  out.append(buf, sizeof(T));
}

void put_string(std::string& out, const std::string& s) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out += s;
}

void put_doubles(std::string& out, std::span<const double> values) {
  out.append(reinterpret_cast<const char*>(values.data()), values.size() * sizeof(double));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T value;
    std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }

  std::string get_string(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  std::string get_string() { return get_string(get<std::uint32_t>()); }

  void get_doubles(std::span<double> out) {
    need(out.size() * sizeof(double));
    std::memcpy(out.data(), bytes_.data() + pos_, out.size() * sizeof(double));
    pos_ += out.size() * sizeof(double);
  }

  bool at_end() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw Error("truncated checkpoint");
  }
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string serialize_checkpoint(const Model& model, const numerics::AdamState* state, std::int64_t step,
                                 const nlohmann::json& extra) {
  nlohmann::json header;
  header["model"] = model.config();
  header["step"] = step;
  header["extra"] = extra;
  auto adapters = nlohmann::json::array();
  for (const auto& g : model.adapter_groups()) adapters.push_back(model.adapter_config(g));
  header["adapters"] = adapters;

  std::string out(kMagic, sizeof kMagic);
  put<std::uint32_t>(out, kVersion);
  const std::string h = header.dump();
  put<std::uint64_t>(out, h.size());
  out += h;

  const auto& params = model.parameters();
  put<std::uint64_t>(out, params.size());
  for (const auto& p : params) {
    put_string(out, p.name);
    put<std::uint8_t>(out, p.tensor.requires_grad() ? 1 : 0);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(p.tensor.ndim()));
    for (auto e : p.tensor.shape()) put<std::int64_t>(out, e);
    put_doubles(out, p.tensor.data());
  }

  const std::size_t moments = state ? state->names.size() : 0;
  put<std::uint64_t>(out, moments);
  for (std::size_t i = 0; i < moments; ++i) {
    put_string(out, state->names[i]);
    put<std::uint64_t>(out, state->moments[i].m.size());
    put_doubles(out, state->moments[i].m);
    put_doubles(out, state->moments[i].v);
  }
  return out;
}

LoadedCheckpoint deserialize_checkpoint(const std::string& bytes) {
  Reader in(bytes);
  if (in.get_string(sizeof kMagic) != std::string(kMagic, sizeof kMagic)) throw Error("not a checkpoint file");
  const auto version = in.get<std::uint32_t>();
  if (version != kVersion) throw Error("unsupported checkpoint version " + std::to_string(version));
  const auto header = nlohmann::json::parse(in.get_string(in.get<std::uint64_t>()));

  LoadedCheckpoint ck{Model(header.at("model").get<ModelConfig>(), 0), {}, header.at("step").get<std::int64_t>(),
                      header.at("extra")};
  for (const auto& a : header.at("adapters")) ck.model.insert_adapters(a.get<AdapterConfig>(), 0);

  const auto count = in.get<std::uint64_t>();
  if (count != ck.model.parameters().size()) throw Error("checkpoint tensor count does not match its config");
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto name = in.get_string();
    const bool trainable = in.get<std::uint8_t>() != 0;
    numerics::Shape shape(in.get<std::uint32_t>());
    for (auto& e : shape) e = in.get<std::int64_t>();
    Tensor t = ck.model.parameter(name);
    if (t.shape() != shape) {
      throw ShapeError("checkpoint tensor " + name + " has shape " + numerics::shape_str(shape) + ", expected " +
                       numerics::shape_str(t.shape()));
    }
    in.get_doubles(t.data());
    t.set_requires_grad(trainable);
  }

  const auto moments = in.get<std::uint64_t>();
  for (std::uint64_t i = 0; i < moments; ++i) {
    ck.state.names.push_back(in.get_string());
    numerics::AdamMoments m;
    m.m.resize(in.get<std::uint64_t>());
    m.v.resize(m.m.size());
    in.get_doubles(m.m);
    in.get_doubles(m.v);
    ck.state.moments.push_back(std::move(m));
  }
  if (!in.at_end()) throw Error("trailing bytes in checkpoint");
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, const Model& model, const numerics::AdamState* state,
                     std::int64_t step, const nlohmann::json& extra) {
  const auto bytes = serialize_checkpoint(model, state, step, extra);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("write failed for " + path.string());
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw PreconditionError("missing checkpoint " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return deserialize_checkpoint(buf.str());
}

}  // namespace distillkit::model
