#include "dvae/io.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>

#include "dvae/config.hpp"
#include "dvae/error.hpp"

namespace dvae {

using nlohmann::json;

namespace {

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

template <class T>
void put_le(std::string& out, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

template <class T>
T get_le(const std::string& in, std::size_t offset) {
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= T(static_cast<unsigned char>(in[offset + i])) << (8 * i);
  return v;
}

std::uint32_t get_be32(const std::string& in, std::size_t offset) {
  std::uint32_t v = 0;
  for (std::size_t i = 0; i < 4; ++i) v = (v << 8) | static_cast<unsigned char>(in[offset + i]);
  return v;
}

std::string npy_field(const std::string& header, const std::string& key, const std::filesystem::path& path) {
  const auto pos = header.find("'" + key + "'");
  if (pos == std::string::npos) throw FormatError("npy '" + path.string() + "': header lacks key '" + key + "'");
  auto colon = header.find(':', pos);
  if (colon == std::string::npos) throw FormatError("npy '" + path.string() + "': malformed entry for '" + key + "'");
  std::size_t start = colon + 1;
  while (start < header.size() && header[start] == ' ') ++start;
  if (start >= header.size()) throw FormatError("npy '" + path.string() + "': malformed entry for '" + key + "'");
  std::size_t end;
  if (header[start] == '\'') {
    end = header.find('\'', start + 1);
    if (end == std::string::npos) throw FormatError("npy '" + path.string() + "': unterminated '" + key + "'");
    return header.substr(start + 1, end - start - 1);
  }
  if (header[start] == '(') {
    end = header.find(')', start);
    if (end == std::string::npos) throw FormatError("npy '" + path.string() + "': unterminated shape tuple");
    return header.substr(start + 1, end - start - 1);
  }
  end = header.find_first_of(",}", start);
  std::string v = header.substr(start, end - start);
  while (!v.empty() && v.back() == ' ') v.pop_back();
  return v;
}

std::size_t dtype_size(const std::string& descr) {
  if (descr == "|b1" || descr == "|u1") return 1;
  if (descr == "<f4") return 4;
  if (descr == "<f8") return 8;
  return 0;
}

}  // namespace

NpyArray read_npy(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  static const char kMagic[] = "\x93NUMPY";
  if (bytes.size() < 6 || std::memcmp(bytes.data(), kMagic, 6) != 0)
    throw FormatError("npy '" + path.string() + "': bad magic");
  if (bytes.size() < 10) throw FormatError("npy '" + path.string() + "': truncated header");
  const auto major = static_cast<unsigned char>(bytes[6]), minor = static_cast<unsigned char>(bytes[7]);
  if (major != 1 || minor != 0) {
    throw FormatError("npy '" + path.string() + "': unsupported version " + std::to_string(major) + "." +
                      std::to_string(minor));
  }
  const std::size_t header_len = get_le<std::uint16_t>(bytes, 8);
  if (bytes.size() < 10 + header_len) throw FormatError("npy '" + path.string() + "': truncated header");
  const std::string header = bytes.substr(10, header_len);

  NpyArray arr;
  arr.descr = npy_field(header, "descr", path);
  const std::size_t item = dtype_size(arr.descr);
  if (item == 0) throw FormatError("npy '" + path.string() + "': unsupported dtype '" + arr.descr + "'");
  const std::string fortran = npy_field(header, "fortran_order", path);
  if (fortran == "True") throw FormatError("npy '" + path.string() + "': fortran_order arrays are not supported");
  if (fortran != "False") throw FormatError("npy '" + path.string() + "': fortran_order must be True or False");
  std::stringstream dims(npy_field(header, "shape", path));
  std::string tok;
  while (std::getline(dims, tok, ',')) {
    const auto first = tok.find_first_not_of(' ');
    if (first == std::string::npos) continue;
    try {
      arr.shape.push_back(std::stoull(tok.substr(first)));
    } catch (const std::exception&) {
      throw FormatError("npy '" + path.string() + "': malformed shape entry '" + tok + "'");
    }
  }
  const std::size_t count = shape_size(arr.shape);
  const std::size_t offset = 10 + header_len;
  if (bytes.size() < offset + count * item) {
    throw FormatError("npy '" + path.string() + "': truncated payload (" + std::to_string(bytes.size() - offset) +
                      " bytes, expected " + std::to_string(count * item) + ")");
  }
  arr.data.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t at = offset + i * item;
    if (item == 1) {
      arr.data[i] = static_cast<unsigned char>(bytes[at]);
    } else if (item == 4) {
      arr.data[i] = std::bit_cast<float>(get_le<std::uint32_t>(bytes, at));
    } else {
      arr.data[i] = std::bit_cast<double>(get_le<std::uint64_t>(bytes, at));
    }
  }
  return arr;
}

Tensor read_npy_matrix(const std::filesystem::path& path) {
  NpyArray arr = read_npy(path);
  if (arr.shape.empty()) return Tensor(Shape{1, 1}, std::move(arr.data));
  const std::size_t rows = arr.shape[0];
  const std::size_t cols = rows == 0 ? 0 : arr.data.size() / rows;
  return Tensor(Shape{rows, cols}, std::move(arr.data));
}

void write_npy(const std::filesystem::path& path, const Tensor& values, const std::string& descr) {
  const std::size_t item = dtype_size(descr);
  if (item == 0) throw ValidationError("write_npy: unsupported dtype '" + descr + "'");
  std::string shape;
  for (std::size_t i = 0; i < values.rank(); ++i) shape += (i ? ", " : "") + std::to_string(values.shape()[i]);
  if (values.rank() == 1) shape += ",";
  std::string header = "{'descr': '" + descr + "', 'fortran_order': False, 'shape': (" + shape + "), }";
  while ((10 + header.size() + 1) % 64 != 0) header.push_back(' ');
  header.push_back('\n');
  std::string out = "\x93NUMPY";
  out.push_back(1);
  out.push_back(0);
  put_le<std::uint16_t>(out, static_cast<std::uint16_t>(header.size()));
  out += header;
  for (double v : values.data()) {
    if (descr == "|b1") {
      out.push_back(v != 0.0 ? 1 : 0);
    } else if (descr == "|u1") {
      if (v < 0.0 || v > 255.0 || v != std::floor(v)) throw ValidationError("write_npy: value not representable as u1");
      out.push_back(static_cast<char>(static_cast<unsigned char>(v)));
    } else if (descr == "<f4") {
      put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    } else {
      put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
    }
  }
  write_file(path, out);
}

Tensor read_idx(const std::filesystem::path& path, std::size_t resize) {
  const std::string bytes = read_file(path);
  if (bytes.size() < 4 || bytes[0] != 0 || bytes[1] != 0) throw FormatError("idx '" + path.string() + "': bad magic");
  const auto dtype = static_cast<unsigned char>(bytes[2]);
  if (dtype != 0x08) throw FormatError("idx '" + path.string() + "': unsupported dtype " + std::to_string(dtype));
  const std::size_t ndims = static_cast<unsigned char>(bytes[3]);
  if (ndims == 0) throw FormatError("idx '" + path.string() + "': zero dimensions");
  if (bytes.size() < 4 + 4 * ndims) throw FormatError("idx '" + path.string() + "': size mismatch in dimension block");
  Shape dims;
  for (std::size_t d = 0; d < ndims; ++d) dims.push_back(get_be32(bytes, 4 + 4 * d));
  const std::size_t count = shape_size(dims), offset = 4 + 4 * ndims;
  if (bytes.size() != offset + count) {
    throw FormatError("idx '" + path.string() + "': size mismatch (" + std::to_string(bytes.size() - offset) +
                      " payload bytes, header implies " + std::to_string(count) + ")");
  }
  const std::size_t rows = dims[0], cols = rows == 0 ? 0 : count / rows;
  Tensor out(Shape{rows, cols});
  for (std::size_t i = 0; i < count; ++i) out[i] = static_cast<unsigned char>(bytes[offset + i]) / 255.0;
  if (resize == 0) return out;
  if (ndims != 3 || dims[1] != dims[2]) throw ValidationError("read_idx: resize needs square images (count x h x w)");
  const std::size_t side = dims[1];
  Tensor resized(Shape{rows, resize * resize});
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t r = 0; r < resize; ++r)
      for (std::size_t c = 0; c < resize; ++c) {
        const std::size_t sr = r * side / resize, sc = c * side / resize;
        resized(i, r * resize + c) = out(i, sr * side + sc);
      }
  return resized;
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

namespace {

std::string csv_escape(const std::string& field) {
  if (field.find_first_of(",\"\r\n") == std::string::npos) return field;
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

}  // namespace

void write_csv(const std::filesystem::path& path, const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows) {
  std::string out;
  auto emit = [&](const std::vector<std::string>& row) {
    if (row.size() != header.size()) throw ValidationError("write_csv: row width differs from header");
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i) out.push_back(',');
      out += csv_escape(row[i]);
    }
    out += "\r\n";
  };
  emit(header);
  for (const auto& r : rows) emit(r);
  write_file(path, out);
}

void write_csv(const std::filesystem::path& path, const std::vector<std::string>& header,
               const std::vector<std::vector<double>>& rows) {
  std::vector<std::vector<std::string>> text;
  text.reserve(rows.size());
  for (const auto& r : rows) {
    std::vector<std::string> t;
    for (double v : r) t.push_back(format_double(v));
    text.push_back(std::move(t));
  }
  write_csv(path, header, text);
}

CsvTable read_csv(const std::filesystem::path& path) {
  const std::string text = read_file(path);
  std::vector<std::vector<std::string>> records;
  std::vector<std::string> record;
  std::string field;
  bool quoted = false, any = false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (quoted) {
      if (c == '"' && i + 1 < text.size() && text[i + 1] == '"') {
        field.push_back('"');
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        field.push_back(c);
      }
      continue;
    }
    if (c == '"') {
      quoted = true;
      any = true;
    } else if (c == ',') {
      record.push_back(std::move(field));
      field.clear();
    } else if (c == '\r' || c == '\n') {
      if (c == '\r' && i + 1 < text.size() && text[i + 1] == '\n') ++i;
      record.push_back(std::move(field));
      field.clear();
      records.push_back(std::move(record));
      record.clear();
      any = false;
    } else {
      field.push_back(c);
      any = true;
    }
  }
  if (quoted) throw FormatError("csv '" + path.string() + "': unterminated quoted field");
  if (any || !record.empty()) {
    record.push_back(std::move(field));
    records.push_back(std::move(record));
  }
  if (records.empty()) throw FormatError("csv '" + path.string() + "': missing header");
  CsvTable t;
  t.header = std::move(records.front());
  t.rows.assign(std::make_move_iterator(records.begin() + 1), std::make_move_iterator(records.end()));
  return t;
}

// ---------------------------------------------------------------------------

namespace {

json mlp_json(const Mlp& mlp) {
  json layers = json::array();
  for (const auto& l : mlp.layers) {
    layers.push_back({{"in", l.weight.rows()}, {"out", l.weight.cols()}, {"activation", activation_name(l.activation)}});
  }
  return layers;
}

Mlp mlp_from_json(const json& layers, const char* what) {
  Mlp m;
  for (const auto& l : layers) {
    DenseLayer d;
    const std::size_t in = l.at("in").get<std::size_t>(), out = l.at("out").get<std::size_t>();
    d.weight = Tensor(Shape{in, out});
    d.bias = Tensor(Shape{1, out});
    d.activation = parse_activation(l.at("activation").get<std::string>());
    m.layers.push_back(std::move(d));
  }
  if (m.layers.empty()) throw FormatError(std::string("checkpoint: ") + what + " has no layers");
  return m;
}

struct Slot {
  std::string name;
  Tensor* tensor;
};

std::vector<Slot> slots(VaeModel& m) {
  std::vector<Slot> out;
  const auto names = m.parameter_names();
  const auto params = m.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) out.push_back({names[i], params[i]});
  if (m.post_encoder_map) out.push_back({"transform.post_encoder_map", &*m.post_encoder_map});
  if (m.post_encoder_shift) out.push_back({"transform.post_encoder_shift", &*m.post_encoder_shift});
  if (m.pre_decoder_map) out.push_back({"transform.pre_decoder_map", &*m.pre_decoder_map});
  return out;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const VaeModel& model, std::uint64_t seed) {
  model.validate();
  VaeModel copy = model;
  json arrays = json::array();
  std::string payload;
  for (const auto& s : slots(copy)) {
    arrays.push_back({{"name", s.name}, {"shape", s.tensor->shape()}});
    for (double v : s.tensor->data()) put_le<std::uint64_t>(payload, std::bit_cast<std::uint64_t>(v));
  }
  json meta = {{"format", "dvae-checkpoint"},
               {"seed", seed},
               {"latent_dim", model.latent_dim},
               {"encoder", mlp_json(model.encoder)},
               {"decoder", mlp_json(model.decoder)},
               {"likelihood", likelihood_to_json(model.likelihood)},
               {"prior", prior_to_json(model.prior)},
               {"arrays", arrays}};
  const std::string text = meta.dump();
  std::string out = "DVAE";
  put_le<std::uint32_t>(out, kCheckpointVersion);
  put_le<std::uint64_t>(out, text.size());
  out += text;
  out += payload;
  write_file(path, out);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  const std::string where = "checkpoint '" + path.string() + "'";
  if (bytes.size() < 16 || bytes.compare(0, 4, "DVAE") != 0) throw FormatError(where + ": bad magic");
  const auto version = get_le<std::uint32_t>(bytes, 4);
  if (version != kCheckpointVersion) throw FormatError(where + ": unsupported version " + std::to_string(version));
  const auto meta_len = get_le<std::uint64_t>(bytes, 8);
  if (bytes.size() < 16 + meta_len) throw FormatError(where + ": truncated metadata block");
  Checkpoint ck;
  ck.metadata = bytes.substr(16, meta_len);
  const json meta = json::parse(ck.metadata, nullptr, false);
  if (meta.is_discarded() || !meta.is_object()) throw FormatError(where + ": metadata is not a JSON object");
  try {
    VaeModel& m = ck.model;
    ck.seed = meta.at("seed").get<std::uint64_t>();
    m.latent_dim = meta.at("latent_dim").get<std::size_t>();
    m.encoder = mlp_from_json(meta.at("encoder"), "encoder");
    m.decoder = mlp_from_json(meta.at("decoder"), "decoder");
    m.likelihood = likelihood_from_json(meta.at("likelihood"));
    m.prior = prior_from_json(meta.at("prior"), m.latent_dim);
    const auto& arrays = meta.at("arrays");
    const std::size_t dim = m.latent_dim;
    for (const auto& a : arrays) {
      const auto name = a.at("name").get<std::string>();
      if (name == "prior.log_variance") m.prior_log_variance = Tensor(Shape{1, dim});
      if (name == "transform.post_encoder_map") m.post_encoder_map = Tensor(Shape{dim, dim});
      if (name == "transform.post_encoder_shift") m.post_encoder_shift = Tensor(Shape{1, dim});
      if (name == "transform.pre_decoder_map") m.pre_decoder_map = Tensor(Shape{dim, dim});
    }
    const auto targets = slots(m);
    if (targets.size() != arrays.size()) throw FormatError(where + ": array count does not match the architecture");
    std::size_t offset = 16 + meta_len;
    for (std::size_t i = 0; i < targets.size(); ++i) {
      const auto name = arrays[i].at("name").get<std::string>();
      const auto shape = arrays[i].at("shape").get<Shape>();
      if (name != targets[i].name) throw FormatError(where + ": expected array '" + targets[i].name + "', found '" + name + "'");
      if (shape != targets[i].tensor->shape())
        throw FormatError(where + ": array '" + name + "' has shape " + shape_string(shape) + ", architecture needs " +
                          shape_string(targets[i].tensor->shape()));
      Tensor& t = *targets[i].tensor;
      if (bytes.size() < offset + 8 * t.size()) throw FormatError(where + ": truncated payload in '" + name + "'");
      for (std::size_t k = 0; k < t.size(); ++k, offset += 8) t[k] = std::bit_cast<double>(get_le<std::uint64_t>(bytes, offset));
    }
    if (offset != bytes.size()) throw FormatError(where + ": trailing bytes after the last array");
    m.validate();
  } catch (const json::exception& e) {
    throw FormatError(where + ": malformed metadata (" + e.what() + ")");
  } catch (const ValidationError& e) {
    throw FormatError(where + ": " + e.what());
  }
  return ck;
}

}  // namespace dvae
