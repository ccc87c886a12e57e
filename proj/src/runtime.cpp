#include "amrt/runtime.hpp"

#include <algorithm>

namespace amrt::runtime {

namespace {

void put_region(ByteWriter& w, const transport::RegionInfo& r) {
    w.put<std::uint32_t>(r.region_id);
    w.put<std::uint64_t>(r.length);
    w.put<std::uint32_t>(r.access_key);
}

transport::RegionInfo get_region(ByteReader& rd) {
    transport::RegionInfo r;
    r.region_id = rd.get<std::uint32_t>();
    r.length = rd.get<std::uint64_t>();
    r.access_key = rd.get<std::uint32_t>();
    return r;
}

Outcome failure(Errc code, std::string detail) {
    Outcome o;
    o.error = code;
    o.detail = std::move(detail);
    return o;
}

void put_fenced(transport::Endpoint& ep, const transport::RegionInfo& dst, std::uint64_t offset, ByteView frame,
                bool fenced) {
    if (!fenced || frame.size() < 2) {
        ep.put(dst.region_id, dst.access_key, offset, frame);
        return;
    }
    // Weakly ordered fabric: data, fence, then the signal byte on its own.
    ep.put(dst.region_id, dst.access_key, offset, frame.first(frame.size() - 1));
    ep.fence();
    ep.put(dst.region_id, dst.access_key, offset + frame.size() - 1, frame.last(1));
}

}  // namespace

// ---------------------------------------------------------------------------
// Executor

Executor::Executor(const linkpkg::SymbolTable& symbols, ExecOptions opts)
    : symbols_(symbols), opts_(opts), ctx_(std::make_unique<picvm::ExecContext>()) {}

void Executor::load_package(const linkpkg::Package& pkg) {
    std::vector<LocalEntry> entries;
    entries.reserve(pkg.elements.size());
    for (const auto& e : pkg.elements) {
        entries.push_back(LocalEntry{picvm::validate(e.code, e.extern_names.size()), e.extern_names, {}, ~0ULL});
    }
    dispatch_ = std::move(entries);
}

Outcome Executor::run(const picvm::CodeObject& code, std::span<const std::uint64_t> table,
                      wire::MessageParts& parts) {
    auto& ctx = *ctx_;
    ctx.args = parts.args;
    ctx.payload = parts.payload;
    ctx.payload_read_only = opts_.read_only_payload;
    ctx.indirection = table;
    ctx.fuel = opts_.fuel;
    ctx.host = &symbols_;
    ctx.reset_for_entry();
    Outcome out;
    out.status = picvm::execute(code, ctx);
    if (out.status.halted()) {
        out.result = ctx.regs[0];
    } else {
        out.error = Errc::ExecutionTrapped;
        out.detail = out.status.describe();
    }
    return out;
}

Outcome Executor::execute(wire::MessageParts& parts) {
    const auto& h = parts.header;
    if (h.element_id == wire::kNoopPongId) return {};
    if (h.element_id == wire::kErrorFrameId) {
        auto [code, detail] = parse_error_parts(parts);
        return failure(code, detail);
    }
    if (h.injected()) {
        if (h.receiver_patch()) {
            try {
                linkpkg::apply_receiver_patch(parts.got_entries, symbols_);
            } catch (const Error& e) {
                return failure(e.code(), e.detail());
            }
        } else if (opts_.require_receiver_patch) {
            return failure(Errc::InvalidArgument, "sender-supplied indirection refused");
        }
        try {
            const auto code = picvm::validate(parts.code, parts.got_entries.size());
            return run(code, parts.got_entries, parts);
        } catch (const Error& e) {
            return failure(e.code(), e.detail());
        }
    }
    if (h.element_id >= dispatch_.size()) {
        return failure(Errc::UnknownElementId, std::to_string(h.element_id));
    }
    LocalEntry& entry = dispatch_[h.element_id];
    const std::uint64_t gen = symbols_.generation();
    if (entry.generation != gen) {
        try {
            entry.table = linkpkg::resolve_local(entry.extern_names, symbols_);
        } catch (const Error& e) {
            return failure(e.code(), e.detail());
        }
        entry.generation = gen;
    }
    return run(entry.code, entry.table, parts);
}

wire::MessageParts make_error_parts(Errc code, const std::string& detail, std::size_t max_payload) {
    wire::MessageParts p;
    p.header.element_id = wire::kErrorFrameId;
    ByteWriter w;
    w.put<std::uint16_t>(static_cast<std::uint16_t>(code));
    const std::size_t room = max_payload > 2 ? max_payload - 2 : 0;
    w.put_bytes(as_bytes(std::string_view(detail).substr(0, room)));
    p.payload = w.take();
    if (p.payload.size() > max_payload) p.payload.resize(max_payload);
    p.sync_header();
    return p;
}

std::pair<Errc, std::string> parse_error_parts(const wire::MessageParts& parts) {
    if (parts.payload.size() < 2) return {Errc::MalformedControlMessage, "short error frame"};
    const auto code = static_cast<Errc>(load_le<std::uint16_t>(parts.payload.data()));
    return {code, std::string(parts.payload.begin() + 2, parts.payload.end())};
}

// ---------------------------------------------------------------------------
// AmServer

AmServer::AmServer(transport::Node& node, linkpkg::SymbolTable& symbols, ServerConfig cfg)
    : node_(node), symbols_(symbols), cfg_(cfg), exec_(symbols, cfg.exec) {
    cfg_.geometry.validate();
    mailbox_ = node_.register_region(cfg_.geometry.region_size(), "mailbox");
    region_ = &node_.region(mailbox_.region_id);

    linkpkg::install_resolve_handler(node_, symbols_);
    node_.set_control_handler(kControlGetMailbox, [this](ByteView) {
        ByteWriter w;
        put_region(w, mailbox_);
        w.put<std::uint16_t>(static_cast<std::uint16_t>(cfg_.geometry.banks));
        w.put<std::uint16_t>(static_cast<std::uint16_t>(cfg_.geometry.slots_per_bank));
        w.put<std::uint32_t>(cfg_.geometry.frame_size);
        w.put<std::uint8_t>(cfg_.frame_mode == wire::FrameMode::fixed ? 0 : 1);
        return w.take();
    });
    node_.set_control_handler(kControlAdvertise, [this](ByteView body) {
        ByteReader rd(body, Errc::MalformedControlMessage);
        const auto credit = get_region(rd);
        const auto pong = get_region(rd);
        if (credit.length < cfg_.geometry.banks || pong.length < cfg_.geometry.frame_size) {
            throw Error(Errc::MalformedControlMessage, "advertised regions too small");
        }
        std::lock_guard lk(mu_);
        credit_region_ = credit;
        pong_region_ = pong;
        if (peer_) {
            peer_->learn_peer_region(credit);
            peer_->learn_peer_region(pong);
        }
        return Bytes{};
    });
}

AmServer::~AmServer() {
    node_.set_control_handler(kControlGetMailbox, nullptr);
    node_.set_control_handler(kControlAdvertise, nullptr);
    node_.set_control_handler(linkpkg::kControlResolve, nullptr);
    node_.unregister_region(mailbox_.region_id);
}

void AmServer::set_peer(transport::Endpoint* peer) {
    std::lock_guard lk(mu_);
    peer_ = peer;
    if (peer_ && credit_region_) peer_->learn_peer_region(*credit_region_);
    if (peer_ && pong_region_) peer_->learn_peer_region(*pong_region_);
}

void AmServer::load_package(const linkpkg::Package& pkg) { exec_.load_package(pkg); }

void AmServer::set_observer(Observer obs) { observer_ = std::move(obs); }

ServerStats AmServer::stats() const {
    std::lock_guard lk(mu_);
    return stats_;
}

void AmServer::record_error(const std::string& what) {
    std::lock_guard lk(mu_);
    ++stats_.errors;
    stats_.last_error = what;
}

void AmServer::serve_loop(std::stop_token stop) {
    while (!stop.stop_requested()) poll_once(cfg_.idle_timeout);
}

bool AmServer::poll_once(std::chrono::nanoseconds timeout) {
    const auto& g = cfg_.geometry;
    const auto [bank, slot] = g.placement(next_);
    mailbox::WaitStats ws;
    const auto r = mailbox::wait_frame(*region_, g, cfg_.frame_mode, bank, slot, cfg_.wait, timeout, &ws);
    {
        std::lock_guard lk(mu_);
        stats_.wait += ws;
    }
    if (r == mailbox::WaitResult::timed_out) return false;

    Bytes frame;
    try {
        frame = mailbox::consume_slot(*region_, g, cfg_.frame_mode, bank, slot);
    } catch (const Error& e) {
        record_error(e.what());
        return false;
    }
    ++next_;
    {
        std::lock_guard lk(mu_);
        ++stats_.received;
    }

    wire::MessageParts parts;
    Outcome outcome;
    bool decoded = false;
    try {
        // Fixed mode decodes against the slot size; variable against its own length.
        parts = wire::decode_frame(frame, {g.frame_size, cfg_.frame_mode});
        decoded = true;
        outcome = exec_.execute(parts);
    } catch (const Error& e) {
        outcome = failure(e.code(), e.detail());
    }
    if (outcome.ok()) {
        std::lock_guard lk(mu_);
        ++stats_.executed;
    } else {
        record_error(std::string(errc_name(outcome.error)) + ": " + outcome.detail);
    }
    if (observer_) observer_(parts, bank, slot, outcome);

    // Credit goes back even for bad frames so a sender never stalls on them.
    if (slot == g.slots_per_bank - 1) {
        transport::Endpoint* peer;
        std::optional<transport::RegionInfo> credit;
        {
            std::lock_guard lk(mu_);
            peer = peer_;
            credit = credit_region_;
        }
        if (peer && credit) {
            try {
                mailbox::release_bank(*peer, *credit, bank);
                std::lock_guard lk(mu_);
                ++stats_.banks_released;
            } catch (const Error& e) {
                record_error(std::string("credit release: ") + e.what());
            }
        }
    }
    if (decoded && parts.header.respond()) respond(parts, outcome);
    return true;
}

void AmServer::respond(wire::MessageParts& parts, const Outcome& outcome) {
    transport::Endpoint* peer;
    std::optional<transport::RegionInfo> pong;
    {
        std::lock_guard lk(mu_);
        peer = peer_;
        pong = pong_region_;
    }
    if (!peer || !pong) {
        record_error("respond requested but no initiator advertised a pong slot");
        return;
    }
    const std::uint32_t slot_size = cfg_.geometry.frame_size;
    const std::size_t max_error_payload = slot_size - wire::kHeaderSize - 1;

    wire::MessageParts resp;
    if (!outcome.ok()) {
        resp = make_error_parts(outcome.error, outcome.detail, max_error_payload);
    } else if (cfg_.pong == PongKind::noop) {
        resp.header.element_id = wire::kNoopPongId;
        resp.args = parts.args;
        resp.sync_header();
    } else {
        resp = std::move(parts);
        resp.header.flags &= static_cast<std::uint8_t>(~wire::flags::kRespond);
        if (resp.header.injected()) {
            // Our handles mean nothing to the initiator: ship name hashes.
            resp.header.flags |= wire::flags::kReceiverPatch;
            for (auto& e : resp.got_entries) {
                const auto name = symbols_.name_of(e);
                if (!name) {
                    resp = make_error_parts(Errc::UnresolvedSymbol, "handle retired before pong", max_error_payload);
                    break;
                }
                e = fnv1a64(*name);
            }
        }
    }
    resp.header.bank = 0;
    resp.header.slot = 0;
    try {
        const std::uint32_t need = wire::frame_size(resp);
        const std::uint32_t len = cfg_.frame_mode == wire::FrameMode::fixed ? slot_size : need;
        if (need > slot_size) throw Error(Errc::FrameTooLarge, "pong");
        pong_buf_.resize(len);
        wire::encode_frame_into(resp, pong_buf_);
        put_fenced(*peer, *pong, 0, pong_buf_, cfg_.fenced_puts);
        std::lock_guard lk(mu_);
        ++stats_.pongs;
    } catch (const Error& e) {
        record_error(std::string("pong: ") + e.what());
    }
}

// ---------------------------------------------------------------------------
// AmClient

AmClient::AmClient(transport::Node& local, transport::Endpoint& ep, linkpkg::SymbolTable& symbols, ClientConfig cfg)
    : local_(local), ep_(ep), symbols_(symbols), cfg_(cfg), exec_(symbols, cfg.exec) {}

void AmClient::connect() {
    const Bytes resp = ep_.call(kControlGetMailbox);
    ByteReader rd(resp, Errc::MalformedControlMessage);
    advert_.region = get_region(rd);
    advert_.geometry.banks = rd.get<std::uint16_t>();
    advert_.geometry.slots_per_bank = rd.get<std::uint16_t>();
    advert_.geometry.frame_size = rd.get<std::uint32_t>();
    advert_.mode = rd.get<std::uint8_t>() == 0 ? wire::FrameMode::fixed : wire::FrameMode::variable;
    advert_.geometry.validate();
    ep_.learn_peer_region(advert_.region);

    credits_ = std::make_unique<mailbox::CreditState>(local_, advert_.geometry.banks);
    pong_info_ = local_.register_region(advert_.geometry.frame_size);
    pong_ = &local_.region(pong_info_.region_id);

    ByteWriter w;
    put_region(w, credits_->info());
    put_region(w, pong_info_);
    ep_.call(kControlAdvertise, w.take());
    frame_buf_.assign(advert_.geometry.frame_size, 0);
    sent_ = 0;
}

void AmClient::handshake(const linkpkg::Package& pkg) {
    std::vector<std::string> names;
    for (const auto& e : pkg.elements) names.insert(names.end(), e.extern_names.begin(), e.extern_names.end());
    handshake(names);
}

void AmClient::handshake(const std::vector<std::string>& names) { cache_.resolve_missing(ep_, names); }

wire::MessageParts AmClient::build_injected(const linkpkg::Element& element, ByteView args, ByteView payload,
                                            bool respond) {
    wire::MessageParts parts;
    parts.header.flags = wire::flags::kInjected;
    if (respond) parts.header.flags |= wire::flags::kRespond;
    if (cfg_.patch == linkpkg::PatchMode::receiver) parts.header.flags |= wire::flags::kReceiverPatch;
    parts.header.element_id = element.element_id;
    parts.got_entries = linkpkg::patch_got(element.extern_names, &cache_, cfg_.patch);
    parts.code = element.code;
    parts.args.assign(args.begin(), args.end());
    parts.payload.assign(payload.begin(), payload.end());
    parts.sync_header();
    return parts;
}

void AmClient::send_injected(const linkpkg::Element& element, ByteView args, ByteView payload, bool respond) {
    auto parts = build_injected(element, args, payload, respond);
    send_parts(parts);
}

void AmClient::send_local(std::uint16_t element_id, ByteView args, ByteView payload, bool respond) {
    wire::MessageParts parts;
    parts.header.flags = respond ? wire::flags::kRespond : 0;
    parts.header.element_id = element_id;
    parts.args.assign(args.begin(), args.end());
    parts.payload.assign(payload.begin(), payload.end());
    parts.sync_header();
    send_parts(parts);
}

void AmClient::send_parts(wire::MessageParts& parts) {
    if (!credits_) throw Error(Errc::InvalidArgument, "connect() first");
    const auto& g = advert_.geometry;
    const std::uint32_t need = wire::frame_size(parts);
    if (need > g.frame_size) {
        throw Error(Errc::FrameTooLarge, std::to_string(need) + " > " + std::to_string(g.frame_size));
    }
    const auto [bank, slot] = g.placement(sent_);
    parts.header.bank = static_cast<std::uint8_t>(bank);
    parts.header.slot = static_cast<std::uint8_t>(slot);
    const std::uint32_t len = advert_.mode == wire::FrameMode::fixed ? g.frame_size : need;
    MutableByteView frame(frame_buf_.data(), len);
    wire::encode_frame_into(parts, frame);
    if (slot == 0) credits_->acquire(bank, cfg_.wait, cfg_.timeout, &wait_stats_);
    put_fenced(ep_, advert_.region, g.slot_offset(bank, slot), frame, cfg_.fenced_puts);
    ++sent_;
}

Pong AmClient::wait_pong() {
    if (!pong_) throw Error(Errc::InvalidArgument, "connect() first");
    const mailbox::MailboxGeometry one{1, 1, advert_.geometry.frame_size};
    if (mailbox::wait_frame(*pong_, one, advert_.mode, 0, 0, cfg_.wait, cfg_.timeout, &wait_stats_) ==
        mailbox::WaitResult::timed_out) {
        throw Error(Errc::Timeout, "no pong");
    }
    const Bytes frame = mailbox::consume_slot(*pong_, one, advert_.mode, 0, 0);
    Pong pong;
    pong.parts = wire::decode_frame(frame, {one.frame_size, advert_.mode});
    if (pong.parts.header.element_id == wire::kErrorFrameId) {
        auto [code, detail] = parse_error_parts(pong.parts);
        throw Error(code, detail);
    }
    pong.outcome = exec_.execute(pong.parts);
    return pong;
}

}  // namespace amrt::runtime
