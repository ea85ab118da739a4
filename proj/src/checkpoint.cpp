#include "mvlab/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "mvlab/errors.hpp"

static_assert(std::endian::native == std::endian::little,
              "serialization assumes a little-endian host");

namespace mvlab {

namespace {

constexpr char kMagic[4] = {'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

void put_block(std::string& out, const std::vector<double>& vs) {
  const std::size_t at = out.size();
  out.resize(at + 8 * vs.size());
  std::memcpy(out.data() + at, vs.data(), 8 * vs.size());
}

}  // namespace

void save_checkpoint(const std::string& path, const ModelParams& model) {
  validate(model.arch);
  const nlohmann::json header{{"format", "CKPT"},
                              {"k", model.arch.k},
                              {"d", model.arch.d},
                              {"patches", model.arch.patches},
                              {"hidden", model.arch.hidden},
                              {"activation", activation_name(model.arch.activation)}};
  const std::string header_bytes = header.dump();

  std::string out;
  out.append(kMagic, 4);
  char word[4];
  std::uint32_t version = kVersion;
  std::memcpy(word, &version, 4);
  out.append(word, 4);
  std::uint64_t len = header_bytes.size();
  char len_word[8];
  std::memcpy(len_word, &len, 8);
  out.append(len_word, 8);
  out += header_bytes;
  put_block(out, model.hidden.values);
  put_block(out, model.head.values);
  put_block(out, model.bias.values);

  std::ofstream file(path, std::ios::binary | std::ios::trunc);
  if (!file) throw IoError("cannot open for writing: " + path);
  file.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!file) throw IoError("write failed: " + path);
}

ModelParams load_checkpoint(const std::string& path) {
  std::ifstream file(path, std::ios::binary);
  if (!file) throw IoError("cannot open checkpoint: " + path);
  std::string buf((std::istreambuf_iterator<char>(file)), std::istreambuf_iterator<char>());

  if (buf.size() < 16 || std::memcmp(buf.data(), kMagic, 4) != 0)
    throw IoError("not a checkpoint file (bad magic): " + path);
  std::uint32_t version;
  std::memcpy(&version, buf.data() + 4, 4);
  if (version != kVersion)
    throw IoError("unsupported checkpoint version " + std::to_string(version));
  std::uint64_t header_len;
  std::memcpy(&header_len, buf.data() + 8, 8);
  if (16 + header_len > buf.size()) throw IoError("checkpoint file truncated: " + path);

  ModelParams model;
  try {
    const nlohmann::json header = nlohmann::json::parse(buf.substr(16, header_len));
    model.arch.k = header.at("k").get<std::size_t>();
    model.arch.d = header.at("d").get<std::size_t>();
    model.arch.patches = header.at("patches").get<std::size_t>();
    model.arch.hidden = header.at("hidden").get<std::size_t>();
    model.arch.activation = activation_from_name(header.at("activation").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("corrupt checkpoint header: ") + e.what());
  }
  validate(model.arch);

  const std::size_t n_hidden = model.arch.hidden * model.arch.d;
  const std::size_t n_head = model.arch.k * model.arch.hidden;
  const std::size_t n_bias = model.arch.k;
  const std::size_t payload = 8 * (n_hidden + n_head + n_bias);
  if (16 + header_len + payload != buf.size())
    throw IoError("checkpoint payload size mismatch: " + path);

  std::size_t pos = 16 + header_len;
  auto take = [&](std::size_t count, std::vector<std::size_t> shape) {
    Tensor t = Tensor::zeros(std::move(shape));
    std::memcpy(t.values.data(), buf.data() + pos, 8 * count);
    pos += 8 * count;
    return t;
  };
  model.hidden = take(n_hidden, {model.arch.hidden, model.arch.d});
  model.head = take(n_head, {model.arch.k, model.arch.hidden});
  model.bias = take(n_bias, {model.arch.k});
  return model;
}

}  // namespace mvlab
