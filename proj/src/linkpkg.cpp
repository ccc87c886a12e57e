#include "amrt/linkpkg.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>

namespace amrt::linkpkg {

// ---------------------------------------------------------------------------
// Packages

const Element* Package::find(std::uint16_t id) const noexcept {
    return id < elements.size() ? &elements[id] : nullptr;
}

const Element* Package::find(std::string_view wanted) const noexcept {
    for (const auto& e : elements) {
        if (e.name == wanted) return &e;
    }
    return nullptr;
}

std::string element_name_from_filename(const std::string& filename) {
    const std::string base = std::filesystem::path(filename).filename().string();
    constexpr std::string_view prefix = "jam_";
    constexpr std::string_view suffix = ".amc";
    if (base.size() <= prefix.size() + suffix.size() || !base.starts_with(prefix) || !base.ends_with(suffix)) {
        throw Error(Errc::InvalidArgument, "'" + base + "' is not a canonical jam filename (jam_<name>.amc)");
    }
    return base.substr(prefix.size(), base.size() - prefix.size() - suffix.size());
}

BuiltPackage build_package(const std::string& name, const std::vector<SourceFile>& sources) {
    if (name.empty()) throw Error(Errc::InvalidArgument, "package name must not be empty");
    if (sources.empty()) throw Error(Errc::InvalidArgument, "package needs at least one source");
    if (sources.size() > 0xFFFE) throw Error(Errc::InvalidArgument, "too many elements");

    std::vector<Element> elements;
    std::set<std::string> seen;
    for (const auto& src : sources) {
        Element e;
        e.name = element_name_from_filename(src.filename);
        if (!seen.insert(e.name).second) throw Error(Errc::DuplicateElementName, e.name);
        try {
            auto frag = assemble_jam(src.text);
            e.code = std::move(frag.code);
            e.extern_names = std::move(frag.extern_names);
        } catch (const Error& err) {
            throw Error(Errc::AssembleError, src.filename + ": " + err.what());
        }
        elements.push_back(std::move(e));
    }
    std::sort(elements.begin(), elements.end(), [](const Element& a, const Element& b) { return a.name < b.name; });
    for (std::size_t i = 0; i < elements.size(); ++i) elements[i].element_id = static_cast<std::uint16_t>(i);

    BuiltPackage out;
    out.package = Package{name, std::move(elements)};
    out.bytes = serialize_package(out.package);
    out.manifest = manifest_text(out.package);
    return out;
}

Bytes serialize_package(const Package& pkg) {
    ByteWriter w;
    w.put_bytes(ByteView(reinterpret_cast<const std::uint8_t*>(kPackageMagic), 4));
    w.put<std::uint16_t>(kPackageVersion);
    w.put_string(pkg.name);
    w.put<std::uint16_t>(static_cast<std::uint16_t>(pkg.elements.size()));
    for (const auto& e : pkg.elements) {
        w.put<std::uint16_t>(e.element_id);
        w.put_string(e.name);
        w.put<std::uint16_t>(static_cast<std::uint16_t>(e.extern_names.size()));
        for (const auto& x : e.extern_names) w.put_string(x);
        w.put<std::uint32_t>(static_cast<std::uint32_t>(e.code.size()));
        w.put_bytes(e.code);
    }
    return w.take();
}

std::string manifest_text(const Package& pkg) {
    std::ostringstream os;
    for (const auto& e : pkg.elements) {
        os << e.element_id << ' ' << e.name << ' ' << e.code.size() << ' ';
        if (e.extern_names.empty()) {
            os << '-';
        } else {
            for (std::size_t i = 0; i < e.extern_names.size(); ++i) os << (i ? "," : "") << e.extern_names[i];
        }
        os << '\n';
    }
    return os.str();
}

Package load_package(ByteView bytes) {
    if (bytes.size() < 6 || !std::equal(bytes.begin(), bytes.begin() + 4, kPackageMagic)) {
        throw Error(Errc::BadPackageMagic);
    }
    ByteReader rd(bytes.subspan(4), Errc::BadPackageMagic);
    if (rd.get<std::uint16_t>() != kPackageVersion) throw Error(Errc::BadPackageMagic, "unsupported version");
    Package pkg;
    pkg.name = rd.get_string();
    if (pkg.name.empty()) throw Error(Errc::BadPackageMagic, "empty package name");
    const auto count = rd.get<std::uint16_t>();

    std::set<std::string> names;
    for (std::uint16_t i = 0; i < count; ++i) {
        const std::string which = "element " + std::to_string(i);
        rd.set_error(Errc::CorruptElement);
        Element e;
        try {
            e.element_id = rd.get<std::uint16_t>();
            e.name = rd.get_string();
            const auto n_ext = rd.get<std::uint16_t>();
            for (std::uint16_t k = 0; k < n_ext; ++k) e.extern_names.push_back(rd.get_string());
            const auto len = rd.get<std::uint32_t>();
            const auto code = rd.get_bytes(len);
            e.code.assign(code.begin(), code.end());
        } catch (const Error&) {
            throw Error(Errc::CorruptElement, which + " truncated");
        }
        if (e.element_id != i || e.name.empty() || !names.insert(e.name).second) {
            throw Error(Errc::CorruptElement, which + " has a bad id or name");
        }
        try {
            picvm::validate(e.code, e.extern_names.size());
        } catch (const Error& err) {
            throw Error(Errc::ValidationFailed, which + ": " + err.what());
        }
        pkg.elements.push_back(std::move(e));
    }
    if (rd.remaining() != 0) throw Error(Errc::CorruptElement, "trailing bytes after last element");
    return pkg;
}

std::vector<SourceFile> read_jam_sources(const std::string& dir) {
    namespace fs = std::filesystem;
    std::error_code ec;
    if (!fs::is_directory(dir, ec)) throw Error(Errc::IoError, dir + " is not a directory");
    std::vector<SourceFile> out;
    for (const auto& entry : fs::directory_iterator(dir)) {
        const std::string base = entry.path().filename().string();
        if (!entry.is_regular_file() || !base.starts_with("jam_") || !base.ends_with(".amc")) continue;
        std::ifstream in(entry.path(), std::ios::binary);
        if (!in) throw Error(Errc::IoError, "cannot read " + entry.path().string());
        std::ostringstream ss;
        ss << in.rdbuf();
        out.push_back({base, ss.str()});
    }
    std::sort(out.begin(), out.end(), [](const SourceFile& a, const SourceFile& b) { return a.filename < b.filename; });
    return out;
}

// ---------------------------------------------------------------------------
// Symbols

std::uint64_t SymbolTable::register_symbol(const std::string& name, picvm::HostFn fn) {
    if (name.empty()) throw Error(Errc::InvalidArgument, "symbol name must not be empty");
    const std::uint64_t hash = fnv1a64(name);
    std::unique_lock lk(mu_);
    if (auto it = by_hash_.find(hash); it != by_hash_.end() && it->second != name) {
        throw Error(Errc::HashCollision, name + " collides with " + it->second);
    }
    if (auto it = by_name_.find(name); it != by_name_.end()) by_handle_.erase(it->second);
    const std::uint64_t handle = next_handle_++;
    by_name_[name] = handle;
    by_handle_[handle] = Entry{name, std::make_shared<const picvm::HostFn>(std::move(fn))};
    by_hash_[hash] = name;
    ++generation_;
    return handle;
}

std::optional<std::uint64_t> SymbolTable::lookup(const std::string& name) const {
    std::shared_lock lk(mu_);
    auto it = by_name_.find(name);
    if (it == by_name_.end()) return std::nullopt;
    return it->second;
}

std::optional<std::uint64_t> SymbolTable::lookup_hash(std::uint64_t hash) const {
    std::shared_lock lk(mu_);
    auto it = by_hash_.find(hash);
    if (it == by_hash_.end()) return std::nullopt;
    return by_name_.at(it->second);
}

std::optional<std::string> SymbolTable::name_of(std::uint64_t handle) const {
    std::shared_lock lk(mu_);
    auto it = by_handle_.find(handle);
    if (it == by_handle_.end()) return std::nullopt;
    return it->second.name;
}

std::optional<picvm::ExternResult> SymbolTable::invoke(std::uint64_t handle, const picvm::ExternCall& call) const {
    std::shared_ptr<const picvm::HostFn> fn;
    {
        std::shared_lock lk(mu_);
        auto it = by_handle_.find(handle);
        if (it == by_handle_.end()) return std::nullopt;
        fn = it->second.fn;
    }
    return (*fn)(call);
}

std::uint64_t SymbolTable::generation() const noexcept {
    std::shared_lock lk(mu_);
    return generation_;
}

std::size_t SymbolTable::size() const {
    std::shared_lock lk(mu_);
    return by_name_.size();
}

std::vector<std::uint64_t> install_ried(SymbolTable& table, const Ried& ried) {
    std::vector<std::uint64_t> handles;
    handles.reserve(ried.symbols.size());
    for (const auto& [name, fn] : ried.symbols) handles.push_back(table.register_symbol(name, fn));
    return handles;
}

// ---------------------------------------------------------------------------
// Handshake

void install_resolve_handler(transport::Node& node, const SymbolTable& table) {
    node.set_control_handler(kControlResolve, [&table](ByteView body) {
        ByteReader rd(body, Errc::MalformedControlMessage);
        const auto n = rd.get<std::uint16_t>();
        std::vector<std::string> names;
        names.reserve(n);
        for (std::uint16_t i = 0; i < n; ++i) names.push_back(rd.get_string());
        if (rd.remaining() != 0) throw Error(Errc::MalformedControlMessage, "trailing bytes");
        ByteWriter w;
        w.put<std::uint16_t>(n);
        for (const auto& name : names) {
            const auto h = table.lookup(name);
            if (!h) throw Error(Errc::UnresolvedSymbol, name);
            w.put<std::uint64_t>(*h);
        }
        return w.take();
    });
}

std::vector<std::uint64_t> resolve_symbols(transport::Endpoint& ep, const std::vector<std::string>& names) {
    if (names.empty()) return {};
    if (names.size() > 0xFFFF) throw Error(Errc::InvalidArgument, "too many names");
    ByteWriter w;
    w.put<std::uint16_t>(static_cast<std::uint16_t>(names.size()));
    for (const auto& n : names) w.put_string(n);
    const Bytes body = w.take();
    const Bytes resp = ep.call(kControlResolve, body);
    ByteReader rd(resp, Errc::MalformedControlMessage);
    if (rd.get<std::uint16_t>() != names.size()) throw Error(Errc::MalformedControlMessage, "count mismatch");
    std::vector<std::uint64_t> out(names.size());
    for (auto& h : out) h = rd.get<std::uint64_t>();
    return out;
}

std::optional<std::uint64_t> PeerLinkCache::get(const std::string& name) const {
    auto it = handles_.find(name);
    if (it == handles_.end()) return std::nullopt;
    return it->second;
}

void PeerLinkCache::resolve_missing(transport::Endpoint& ep, const std::vector<std::string>& names) {
    std::vector<std::string> missing;
    for (const auto& n : names) {
        if (!handles_.contains(n) && std::find(missing.begin(), missing.end(), n) == missing.end()) {
            missing.push_back(n);
        }
    }
    const auto handles = resolve_symbols(ep, missing);
    for (std::size_t i = 0; i < missing.size(); ++i) handles_[missing[i]] = handles[i];
}

IndirectionTable patch_got(const std::vector<std::string>& extern_names, const PeerLinkCache* cache, PatchMode mode) {
    IndirectionTable table;
    table.reserve(extern_names.size());
    for (const auto& name : extern_names) {
        if (mode == PatchMode::receiver) {
            table.push_back(fnv1a64(name));
            continue;
        }
        const auto h = cache ? cache->get(name) : std::nullopt;
        if (!h) throw Error(Errc::UnresolvedSymbol, name);
        table.push_back(*h);
    }
    return table;
}

void apply_receiver_patch(std::span<std::uint64_t> entries, const SymbolTable& table) {
    for (auto& e : entries) {
        const auto h = table.lookup_hash(e);
        if (!h) throw Error(Errc::UnknownSymbolHash, std::to_string(e));
        e = *h;
    }
}

IndirectionTable resolve_local(const std::vector<std::string>& extern_names, const SymbolTable& table) {
    IndirectionTable out;
    out.reserve(extern_names.size());
    for (const auto& name : extern_names) {
        const auto h = table.lookup(name);
        if (!h) throw Error(Errc::UnresolvedSymbol, name);
        out.push_back(*h);
    }
    return out;
}

}  // namespace amrt::linkpkg
