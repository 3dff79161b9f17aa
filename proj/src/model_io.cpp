// Model file layout, all integers little-endian:
//   8 bytes   magic "KLPCGP\r\n"
//   u64       header length L
//   L bytes   JSON header: format version, dimensions, array table, meta
//   f64[]     arrays in header order, each column-major
//   u64       FNV-1a 64 checksum of every preceding byte
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>

#include "klpc/emulator.hpp"
#include "klpc/error.hpp"

namespace klpc {

namespace {
constexpr char magic[8] = {'K', 'L', 'P', 'C', 'G', 'P', '\r', '\n'};

std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int b = 0; b < 8; ++b) out.push_back(static_cast<char>((v >> (8 * b)) & 0xff));
}

std::uint64_t get_u64(std::string_view in, std::size_t at) {
  std::uint64_t v = 0;
  for (int b = 0; b < 8; ++b)
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[at + static_cast<std::size_t>(b)])) << (8 * b);
  return v;
}

struct Writer {
  nlohmann::json table = nlohmann::json::array();
  std::string payload;

  void add(const std::string& name, const Eigen::MatrixXd& m) {
    table.push_back({name, m.rows(), m.cols()});
    for (Eigen::Index i = 0; i < m.size(); ++i) put_u64(payload, std::bit_cast<std::uint64_t>(m.data()[i]));
  }
  void add(const std::string& name, const Eigen::VectorXd& v) { add(name, Eigen::MatrixXd(v)); }
  void add(const std::string& name, double x) { add(name, Eigen::MatrixXd(Eigen::MatrixXd::Constant(1, 1, x))); }
};

struct Reader {
  std::map<std::string, Eigen::MatrixXd> arrays;

  const Eigen::MatrixXd& get(const std::string& name, Eigen::Index rows, Eigen::Index cols) const {
    const auto it = arrays.find(name);
    if (it == arrays.end()) throw CorruptFileError("model file: missing array '" + name + "'");
    if (it->second.rows() != rows || it->second.cols() != cols)
      throw CorruptFileError("model file: array '" + name + "' has shape " +
                             std::to_string(it->second.rows()) + "x" + std::to_string(it->second.cols()) +
                             ", expected " + std::to_string(rows) + "x" + std::to_string(cols));
    return it->second;
  }
  Eigen::VectorXd vec(const std::string& name, Eigen::Index n) const { return get(name, n, 1).col(0); }
  double scalar(const std::string& name) const { return get(name, 1, 1)(0, 0); }
};
}  // namespace

void save_model(const EmulatorModel& model, std::ostream& out) {
  Writer w;
  const auto& kl = model.kl();
  w.add("kl_mean", kl.mean());
  w.add("kl_eigenvalues", kl.eigenvalues());
  w.add("kl_eigenvectors", kl.eigenvectors());
  w.add("design", model.design());
  const auto terms = static_cast<Eigen::Index>(model.terms());
  const auto modes = static_cast<Eigen::Index>(model.modes());
  Eigen::MatrixXd pc(terms * static_cast<Eigen::Index>(model.design_points()), modes);
  for (std::size_t j = 0; j < model.design_points(); ++j)
    pc.middleRows(static_cast<Eigen::Index>(j) * terms, terms) = model.pc()[j].coefficients();
  w.add("pc_coefficients", pc);
  const auto& g = model.gp();
  w.add("gp_scaling_lo", g.scaling.lo);
  w.add("gp_scaling_span", g.scaling.span);
  w.add("gp_design_scaled", g.design_scaled);
  w.add("gp_center", g.center);
  w.add("gp_scale", g.scale);
  w.add("gp_basis", g.basis.basis);
  w.add("gp_weights", g.basis.weights);
  w.add("gp_singular_values", g.basis.singular_values);
  w.add("gp_lambda_delta", g.hyper.lambda_delta);
  w.add("gp_lambda_w", g.hyper.lambda_w);
  w.add("gp_rho", g.hyper.rho);
  const auto len = static_cast<Eigen::Index>(model.chain().size());
  const auto pcs = static_cast<Eigen::Index>(g.basis.components());
  const auto p = static_cast<Eigen::Index>(model.inputs());
  Eigen::MatrixXd chain_delta(len, 1), chain_w(len, pcs), chain_rho(len, pcs * p);
  for (Eigen::Index t = 0; t < len; ++t) {
    const auto& h = model.chain()[static_cast<std::size_t>(t)];
    chain_delta(t, 0) = h.lambda_delta;
    chain_w.row(t) = h.lambda_w.transpose();
    // Row t holds rho row-major: rho(i, k) at column i * p + k.
    for (Eigen::Index i = 0; i < pcs; ++i)
      for (Eigen::Index k = 0; k < p; ++k) chain_rho(t, i * p + k) = h.rho(i, k);
  }
  w.add("chain_lambda_delta", chain_delta);
  w.add("chain_lambda_w", chain_w);
  w.add("chain_rho", chain_rho);

  nlohmann::json header;
  header["format"] = model_format_version;
  header["dims"] = {{"output", model.output_dim()},
                    {"modes", model.modes()},
                    {"terms", model.terms()},
                    {"design_points", model.design_points()},
                    {"inputs", model.inputs()},
                    {"gp_components", g.basis.components()},
                    {"chain_length", model.chain().size()}};
  header["arrays"] = w.table;
  header["meta"] = model.meta();
  const std::string text = header.dump();

  std::string bytes(magic, sizeof magic);
  put_u64(bytes, text.size());
  bytes += text;
  bytes += w.payload;
  put_u64(bytes, fnv1a(bytes));
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("failed writing model file");
}

void save_model(const EmulatorModel& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot open '" + path.string() + "' for writing");
  save_model(model, out);
}

EmulatorModel load_model(std::istream& in) {
  const std::string bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  const std::string_view view(bytes);
  if (view.size() < 24 || std::memcmp(view.data(), magic, sizeof magic) != 0)
    throw CorruptFileError("not a model file (bad magic or truncated)");
  const std::uint64_t header_len = get_u64(view, 8);
  if (header_len > view.size() - 24) throw CorruptFileError("model file truncated inside the header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(view.substr(16, header_len));
  } catch (const nlohmann::json::exception& e) {
    throw CorruptFileError(std::string("model header is not valid JSON: ") + e.what());
  }
  if (!header.is_object() || !header.contains("format") || !header["format"].is_string())
    throw CorruptFileError("model header lacks a format version");
  const std::string version = header["format"].get<std::string>();
  if (version != model_format_version) throw VersionMismatchError(version, model_format_version);

  Reader r;
  std::size_t at = 16 + header_len;
  try {
    for (const auto& entry : header.at("arrays")) {
      const auto name = entry.at(0).get<std::string>();
      const auto rows = entry.at(1).get<Eigen::Index>(), cols = entry.at(2).get<Eigen::Index>();
      if (rows < 0 || cols < 0) throw CorruptFileError("negative array shape");
      const auto count = static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols);
      if (count > (view.size() - at) / 8) throw CorruptFileError("model file truncated inside array '" + name + "'");
      Eigen::MatrixXd m(rows, cols);
      for (std::size_t i = 0; i < count; ++i, at += 8) m.data()[i] = std::bit_cast<double>(get_u64(view, at));
      r.arrays[name] = std::move(m);
    }
  } catch (const nlohmann::json::exception& e) {
    throw CorruptFileError(std::string("model header array table malformed: ") + e.what());
  }
  if (view.size() - at != 8) throw CorruptFileError("model file has a truncated or oversized payload");
  if (get_u64(view, at) != fnv1a(view.substr(0, at))) throw CorruptFileError("model file checksum mismatch");

  try {
    const auto& dims = header.at("dims");
    const auto d = dims.at("output").get<Eigen::Index>();
    const auto modes = dims.at("modes").get<Eigen::Index>();
    const auto terms = dims.at("terms").get<Eigen::Index>();
    const auto m = dims.at("design_points").get<Eigen::Index>();
    const auto p = dims.at("inputs").get<Eigen::Index>();
    const auto pcs = dims.at("gp_components").get<Eigen::Index>();
    const auto len = dims.at("chain_length").get<Eigen::Index>();
    const Eigen::Index rows = modes * terms;

    KlBasis kl(r.vec("kl_mean", d), r.vec("kl_eigenvalues", d), r.get("kl_eigenvectors", d, d),
               static_cast<std::size_t>(modes));
    const Eigen::MatrixXd design = r.get("design", m, p);
    const Eigen::MatrixXd& pcm = r.get("pc_coefficients", terms * m, modes);
    std::vector<PcExpansion> pc;
    for (Eigen::Index j = 0; j < m; ++j)
      pc.emplace_back(static_cast<std::size_t>(modes), pcm.middleRows(j * terms, terms));
    gp::GpModel g;
    g.scaling.lo = r.vec("gp_scaling_lo", p);
    g.scaling.span = r.vec("gp_scaling_span", p);
    g.design_scaled = r.get("gp_design_scaled", m, p);
    g.center = r.vec("gp_center", rows);
    g.scale = r.scalar("gp_scale");
    g.basis.basis = r.get("gp_basis", rows, pcs);
    g.basis.weights = r.get("gp_weights", pcs, m);
    g.basis.singular_values = r.arrays.count("gp_singular_values") ? r.arrays.at("gp_singular_values").col(0)
                                                                   : Eigen::VectorXd();
    g.hyper.lambda_delta = r.scalar("gp_lambda_delta");
    g.hyper.lambda_w = r.vec("gp_lambda_w", pcs);
    g.hyper.rho = r.get("gp_rho", pcs, p);
    const Eigen::MatrixXd& cd = r.get("chain_lambda_delta", len, 1);
    const Eigen::MatrixXd& cw = r.get("chain_lambda_w", len, pcs);
    const Eigen::MatrixXd& cr = r.get("chain_rho", len, pcs * p);
    std::vector<gp::Hyperparams> chain(static_cast<std::size_t>(len));
    for (Eigen::Index t = 0; t < len; ++t) {
      auto& h = chain[static_cast<std::size_t>(t)];
      h.lambda_delta = cd(t, 0);
      h.lambda_w = cw.row(t).transpose();
      h.rho.resize(pcs, p);
      for (Eigen::Index i = 0; i < pcs; ++i)
        for (Eigen::Index k = 0; k < p; ++k) h.rho(i, k) = cr(t, i * p + k);
    }
    return EmulatorModel(std::move(kl), design, std::move(pc), std::move(g), std::move(chain),
                         header.value("meta", nlohmann::json::object()));
  } catch (const nlohmann::json::exception& e) {
    throw CorruptFileError(std::string("model header dimensions malformed: ") + e.what());
  } catch (const InputError& e) {
    throw CorruptFileError(std::string("model file inconsistent: ") + e.what());
  }
}

EmulatorModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open model file '" + path.string() + "'");
  return load_model(in);
}

}  // namespace klpc
