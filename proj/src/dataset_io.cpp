#include "mvlab/dataset_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "mvlab/errors.hpp"

static_assert(std::endian::native == std::endian::little,
              "serialization assumes a little-endian host");

namespace mvlab {

namespace {

constexpr char kMagic[4] = {'M', 'V', 'D', 'S'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::string& out, std::uint32_t v) {
  char b[4];
  std::memcpy(b, &v, 4);
  out.append(b, 4);
}

void put_u64(std::string& out, std::uint64_t v) {
  char b[8];
  std::memcpy(b, &v, 8);
  out.append(b, 8);
}

void put_f64(std::string& out, double v) {
  char b[8];
  std::memcpy(b, &v, 8);
  out.append(b, 8);
}

void put_f64_block(std::string& out, const std::vector<double>& vs) {
  const std::size_t at = out.size();
  out.resize(at + 8 * vs.size());
  std::memcpy(out.data() + at, vs.data(), 8 * vs.size());
}

struct Reader {
  const std::string& buf;
  std::size_t pos = 0;

  void need(std::size_t n) const {
    if (pos + n > buf.size()) throw IoError("dataset file truncated");
  }
  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(buf[pos++]);
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v;
    std::memcpy(&v, buf.data() + pos, 4);
    pos += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v;
    std::memcpy(&v, buf.data() + pos, 8);
    pos += 8;
    return v;
  }
  double f64() {
    need(8);
    double v;
    std::memcpy(&v, buf.data() + pos, 8);
    pos += 8;
    return v;
  }
  void f64_block(std::vector<double>& dst, std::size_t n) {
    need(8 * n);
    dst.resize(n);
    std::memcpy(dst.data(), buf.data() + pos, 8 * n);
    pos += 8 * n;
  }
};

nlohmann::json config_to_json(const DistributionConfig& cfg) {
  return nlohmann::json{{"k", cfg.k},
                        {"d", cfg.d},
                        {"patches", cfg.patches},
                        {"patches_per_feature", cfg.patches_per_feature},
                        {"s", cfg.s},
                        {"mu", cfg.mu},
                        {"gamma", cfg.gamma},
                        {"rho", cfg.rho},
                        {"noise_std", cfg.noise_std},
                        {"main_lo", cfg.main_lo},
                        {"main_hi", cfg.main_hi},
                        {"simplified", cfg.simplified}};
}

DistributionConfig config_from_json(const nlohmann::json& j) {
  DistributionConfig cfg;
  cfg.k = j.at("k").get<std::size_t>();
  cfg.d = j.at("d").get<std::size_t>();
  cfg.patches = j.at("patches").get<std::size_t>();
  cfg.patches_per_feature = j.at("patches_per_feature").get<std::size_t>();
  cfg.s = j.at("s").get<double>();
  cfg.mu = j.at("mu").get<double>();
  cfg.gamma = j.at("gamma").get<double>();
  cfg.rho = j.at("rho").get<double>();
  cfg.noise_std = j.at("noise_std").get<double>();
  cfg.main_lo = j.at("main_lo").get<double>();
  cfg.main_hi = j.at("main_hi").get<double>();
  cfg.simplified = j.at("simplified").get<bool>();
  return cfg;
}

}  // namespace

std::uint64_t fnv1a64(const void* data, std::size_t len) {
  const auto* bytes = static_cast<const unsigned char*>(data);
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (std::size_t i = 0; i < len; ++i) {
    h ^= bytes[i];
    h *= 0x100000001B3ULL;
  }
  return h;
}

std::uint64_t fnv1a64_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open for checksum: " + path);
  std::uint64_t h = 0xCBF29CE484222325ULL;
  char buf[1 << 16];
  while (in.read(buf, sizeof buf) || in.gcount() > 0) {
    const std::streamsize n = in.gcount();
    for (std::streamsize i = 0; i < n; ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 0x100000001B3ULL;
    }
    if (!in) break;
  }
  return h;
}

std::string checksum_hex(std::uint64_t checksum) {
  char out[17];
  std::snprintf(out, sizeof out, "%016llx", static_cast<unsigned long long>(checksum));
  return std::string(out);
}

void write_dataset(const std::string& path, const Dataset& ds) {
  const std::uint64_t bank_sum =
      fnv1a64(ds.bank.vectors.values.data(), 8 * ds.bank.vectors.values.size());

  nlohmann::json header{{"format", "MVDS"},
                        {"config", config_to_json(ds.config)},
                        {"n_samples", ds.samples.size()},
                        {"seed", ds.seed},
                        {"dropped_off_class", ds.dropped_off_class},
                        {"bank_checksum", checksum_hex(bank_sum)}};
  const std::string header_bytes = header.dump();

  std::string out;
  out.append(kMagic, 4);
  put_u32(out, kVersion);
  put_u64(out, header_bytes.size());
  out += header_bytes;
  put_f64_block(out, ds.bank.vectors.values);
  for (const auto& dp : ds.samples) {
    put_u32(out, dp.label);
    out.push_back(static_cast<char>(static_cast<std::uint8_t>(dp.view)));
    out.push_back(static_cast<char>(dp.single_which));
    put_f64_block(out, dp.patches.values);
    put_u32(out, static_cast<std::uint32_t>(dp.features.size()));
    for (const auto& f : dp.features) {
      put_u32(out, f.class_index);
      out.push_back(static_cast<char>(f.which));
      put_f64(out, f.coeff_sum);
      put_u32(out, static_cast<std::uint32_t>(f.patch_indices.size()));
      for (auto idx : f.patch_indices) put_u32(out, idx);
    }
    put_u32(out, dp.dropped_off_class);
  }

  std::ofstream file(path, std::ios::binary | std::ios::trunc);
  if (!file) throw IoError("cannot open for writing: " + path);
  file.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!file) throw IoError("write failed: " + path);
}

Dataset read_dataset(const std::string& path) {
  std::ifstream file(path, std::ios::binary);
  if (!file) throw IoError("cannot open dataset: " + path);
  std::string buf((std::istreambuf_iterator<char>(file)), std::istreambuf_iterator<char>());
  Reader r{buf};

  r.need(4);
  if (std::memcmp(buf.data(), kMagic, 4) != 0)
    throw IoError("not a dataset file (bad magic): " + path);
  r.pos = 4;
  const std::uint32_t version = r.u32();
  if (version != kVersion)
    throw IoError("unsupported dataset version " + std::to_string(version));
  const std::uint64_t header_len = r.u64();
  r.need(header_len);
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(buf.substr(r.pos, header_len));
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("corrupt dataset header: ") + e.what());
  }
  r.pos += header_len;

  Dataset ds;
  try {
    ds.config = config_from_json(header.at("config"));
    ds.seed = header.at("seed").get<std::uint64_t>();
    ds.dropped_off_class = header.at("dropped_off_class").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("corrupt dataset header: ") + e.what());
  }
  const auto n = header.at("n_samples").get<std::size_t>();

  ds.bank.k = ds.config.k;
  ds.bank.d = ds.config.d;
  ds.bank.vectors = Tensor::matrix(2 * ds.config.k, ds.config.d);
  r.f64_block(ds.bank.vectors.values, 2 * ds.config.k * ds.config.d);
  const std::uint64_t bank_sum =
      fnv1a64(ds.bank.vectors.values.data(), 8 * ds.bank.vectors.values.size());
  if (checksum_hex(bank_sum) != header.at("bank_checksum").get<std::string>())
    throw IoError("dataset bank checksum mismatch: " + path);

  ds.samples.resize(n);
  for (auto& dp : ds.samples) {
    dp.label = r.u32();
    dp.view = static_cast<View>(r.u8());
    dp.single_which = r.u8();
    dp.patches = Tensor::matrix(ds.config.patches, ds.config.d);
    r.f64_block(dp.patches.values, ds.config.patches * ds.config.d);
    const std::uint32_t n_features = r.u32();
    dp.features.resize(n_features);
    for (auto& f : dp.features) {
      f.class_index = r.u32();
      f.which = r.u8();
      f.coeff_sum = r.f64();
      const std::uint32_t n_patches = r.u32();
      f.patch_indices.resize(n_patches);
      for (auto& idx : f.patch_indices) idx = r.u32();
    }
    dp.dropped_off_class = r.u32();
  }
  if (r.pos != buf.size()) throw IoError("trailing bytes in dataset file: " + path);
  return ds;
}

}  // namespace mvlab
