// SPDX-License-Identifier: Apache-2.0
//
// Socket transports for ServerCore: length-prefixed TCP and a web-socket
// endpoint (one JSON object per text frame) that also serves static files.
// Everything runs on one io_context thread, so the core needs no locking.
#pragma once

#include "rail/presence.hpp"
#include "rail/protocol.hpp"
#include "rail/server.hpp"

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>
#include <fmt/format.h>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <memory>
#include <set>
#include <string>

namespace rail::net
{
    namespace asio = boost::asio;
    namespace beast = boost::beast;
    namespace http = beast::http;
    namespace websocket = beast::websocket;
    using tcp = asio::ip::tcp;

    /// Sessions register here so the server can pump every outbox after a tick.
    class Pumpable
    {
    public:
        virtual ~Pumpable() = default;
        virtual void pump() = 0;
    };

    struct Registry
    {
        std::set<std::shared_ptr<Pumpable>> live;
        void pump_all()
        {
            auto copy = live;
            for (auto &p : copy)
                p->pump();
        }
    };

    class TcpSession : public Pumpable, public std::enable_shared_from_this<TcpSession>
    {
    public:
        TcpSession(tcp::socket socket, ServerCore &core, Registry &reg) : socket_(std::move(socket)), core_(core), reg_(reg), id_(core.open_session()) {}

        void start()
        {
            reg_.live.insert(shared_from_this());
            read();
        }

        void pump() override
        {
            if (writing_ || closed_)
                return;
            if (!core_.is_open(id_))
            {
                shutdown();
                return;
            }
            auto m = core_.pop_outbox(id_);
            if (!m)
                return;
            writing_ = true;
            out_ = encode_frame(*m);
            asio::async_write(socket_, asio::buffer(out_), [self = shared_from_this()](beast::error_code ec, std::size_t) {
                self->writing_ = false;
                if (ec)
                    return self->fail("write: " + ec.message());
                self->pump();
            });
        }

    private:
        void read()
        {
            socket_.async_read_some(asio::buffer(buf_), [self = shared_from_this()](beast::error_code ec, std::size_t n) {
                if (ec)
                    return self->fail(ec == asio::error::eof ? "peer closed" : "read: " + ec.message());
                self->decoder_.feed(std::string_view(self->buf_.data(), n));
                while (true)
                {
                    auto r = self->decoder_.next();
                    if (r.status == FrameResult::Status::need_more)
                        break;
                    if (r.status == FrameResult::Status::fatal)
                    {
                        self->core_.reject_frame(self->id_, r.error);
                        self->reg_.pump_all();
                        return self->fail(r.error);
                    }
                    if (r.status == FrameResult::Status::bad_frame)
                        self->core_.reject_frame(self->id_, r.error);
                    else
                        self->core_.handle_message(self->id_, r.message);
                }
                self->reg_.pump_all();
                self->read();
            });
        }

        void fail(const std::string &why)
        {
            if (closed_)
                return;
            core_.close_session(id_, why);
            shutdown();
        }

        void shutdown()
        {
            closed_ = true;
            beast::error_code ec;
            socket_.shutdown(tcp::socket::shutdown_both, ec);
            socket_.close(ec);
            reg_.live.erase(shared_from_this());
        }

        tcp::socket socket_;
        ServerCore &core_;
        Registry &reg_;
        ServerCore::SessionId id_;
        std::array<char, 65536> buf_{};
        FrameDecoder decoder_;
        std::string out_;
        bool writing_ = false;
        bool closed_ = false;
    };

    class WsSession : public Pumpable, public std::enable_shared_from_this<WsSession>
    {
    public:
        WsSession(tcp::socket socket, ServerCore &core, Registry &reg) : ws_(std::move(socket)), core_(core), reg_(reg) {}

        void start(http::request<http::string_body> req)
        {
            ws_.text(true);
            ws_.read_message_max(max_frame_payload);
            ws_.async_accept(req, [self = shared_from_this()](beast::error_code ec) {
                if (ec)
                    return;
                self->id_ = self->core_.open_session();
                self->open_ = true;
                self->reg_.live.insert(self);
                self->read();
            });
        }

        void pump() override
        {
            if (writing_ || !open_)
                return;
            if (!core_.is_open(id_))
            {
                shutdown();
                return;
            }
            auto m = core_.pop_outbox(id_);
            if (!m)
                return;
            writing_ = true;
            out_ = encode_payload(*m);
            ws_.async_write(asio::buffer(out_), [self = shared_from_this()](beast::error_code ec, std::size_t) {
                self->writing_ = false;
                if (ec)
                    return self->fail("write: " + ec.message());
                self->pump();
            });
        }

    private:
        void read()
        {
            ws_.async_read(in_, [self = shared_from_this()](beast::error_code ec, std::size_t) {
                if (ec)
                    return self->fail("read: " + ec.message());
                const std::string text = beast::buffers_to_string(self->in_.data());
                self->in_.consume(self->in_.size());
                try
                {
                    self->core_.handle_message(self->id_, decode_payload(text));
                }
                catch (const Error &e)
                {
                    self->core_.reject_frame(self->id_, e.what());
                }
                self->reg_.pump_all();
                self->read();
            });
        }

        void fail(const std::string &why)
        {
            if (!open_)
                return;
            core_.close_session(id_, why);
            shutdown();
        }

        void shutdown()
        {
            if (!open_)
                return;
            open_ = false;
            beast::error_code ec;
            ws_.next_layer().close(ec);
            reg_.live.erase(shared_from_this());
        }

        websocket::stream<tcp::socket> ws_;
        ServerCore &core_;
        Registry &reg_;
        ServerCore::SessionId id_ = 0;
        beast::flat_buffer in_;
        std::string out_;
        bool writing_ = false;
        bool open_ = false;
    };

    inline std::string_view mime_type(const std::filesystem::path &p)
    {
        const auto ext = p.extension().string();
        if (ext == ".html")
            return "text/html; charset=utf-8";
        if (ext == ".js" || ext == ".mjs")
            return "text/javascript";
        if (ext == ".css")
            return "text/css";
        if (ext == ".json")
            return "application/json";
        if (ext == ".svg")
            return "image/svg+xml";
        if (ext == ".png")
            return "image/png";
        if (ext == ".wav")
            return "audio/wav";
        if (ext == ".mp3")
            return "audio/mpeg";
        if (ext == ".ogg")
            return "audio/ogg";
        return "application/octet-stream";
    }

    /// Maps a request target to a file under `root`; empty when the target
    /// escapes the root or is malformed.
    inline std::optional<std::filesystem::path> static_path(const std::filesystem::path &root, std::string_view target)
    {
        if (target.empty() || target.front() != '/')
            return std::nullopt;
        if (auto q = target.find('?'); q != std::string_view::npos)
            target = target.substr(0, q);
        std::filesystem::path rel(std::string(target.substr(1)));
        for (const auto &part : rel)
            if (part == "..")
                return std::nullopt;
        if (target.back() == '/')
            rel /= "index.html";
        return root / rel;
    }

    struct HttpOptions
    {
        std::filesystem::path www_root;        // static assets; empty disables
        std::filesystem::path responses_file;  // questionnaire CSV sink; empty disables
    };

    /// Reads one HTTP request, then either upgrades to a web socket at /ws,
    /// accepts a questionnaire POST, or serves a static file.
    class HttpSession : public std::enable_shared_from_this<HttpSession>
    {
    public:
        HttpSession(tcp::socket socket, ServerCore &core, Registry &reg, const HttpOptions &opts)
            : stream_(std::move(socket)), core_(core), reg_(reg), opts_(opts)
        {
        }

        void start()
        {
            parser_.emplace();
            parser_->body_limit(1 << 20);
            http::async_read(stream_, buf_, *parser_, [self = shared_from_this()](beast::error_code ec, std::size_t) {
                if (ec)
                    return;
                self->route(self->parser_->release());
            });
        }

    private:
        void route(http::request<http::string_body> req)
        {
            const std::string target(req.target());
            if (websocket::is_upgrade(req))
            {
                if (target != "/ws")
                    return reply(req, http::status::not_found, "text/plain", "web socket endpoint is /ws\n");
                std::make_shared<WsSession>(stream_.release_socket(), core_, reg_)->start(std::move(req));
                return;
            }
            if (req.method() == http::verb::post && target == "/api/responses")
                return accept_responses(req);
            if (req.method() != http::verb::get && req.method() != http::verb::head)
                return reply(req, http::status::method_not_allowed, "text/plain", "method not allowed\n");
            if (opts_.www_root.empty())
                return reply(req, http::status::not_found, "text/plain", "no static root configured\n");
            const auto path = static_path(opts_.www_root, target);
            if (!path)
                return reply(req, http::status::bad_request, "text/plain", "bad path\n");
            std::ifstream in(*path, std::ios::binary);
            if (!in)
                return reply(req, http::status::not_found, "text/plain", "not found\n");
            std::string body((std::istreambuf_iterator<char>(in)), {});
            reply(req, http::status::ok, mime_type(*path), std::move(body));
        }

        void accept_responses(const http::request<http::string_body> &req)
        {
            if (opts_.responses_file.empty())
                return reply(req, http::status::not_found, "text/plain", "responses are not collected\n");
            try
            {
                const auto rows = parse_presence_csv(req.body());
                score_presence(rows);
                const bool fresh = !std::filesystem::exists(opts_.responses_file);
                std::ofstream out(opts_.responses_file, std::ios::app | std::ios::binary);
                std::string csv = presence_csv(rows);
                if (!fresh)
                    csv = csv.substr(csv.find('\n') + 1);
                out << csv;
                reply(req, http::status::ok, "text/plain", fmt::format("stored {} responses\n", rows.size()));
            }
            catch (const Error &e)
            {
                reply(req, http::status::bad_request, "text/plain", std::string(e.what()) + "\n");
            }
        }

        void reply(const http::request<http::string_body> &req, http::status status, std::string_view type, std::string body)
        {
            auto res = std::make_shared<http::response<http::string_body>>(status, req.version());
            res->set(http::field::server, "rail");
            res->set(http::field::content_type, boost::beast::string_view(type.data(), type.size()));
            res->keep_alive(false);
            res->body() = std::move(body);
            res->prepare_payload();
            http::async_write(stream_, *res, [self = shared_from_this(), res](beast::error_code, std::size_t) {
                beast::error_code ec;
                self->stream_.socket().shutdown(tcp::socket::shutdown_send, ec);
            });
        }

        beast::tcp_stream stream_;
        ServerCore &core_;
        Registry &reg_;
        const HttpOptions &opts_;
        beast::flat_buffer buf_;
        std::optional<http::request_parser<http::string_body>> parser_;
    };

    struct NetOptions
    {
        std::string address = "0.0.0.0";
        unsigned short tcp_port = 2000;
        unsigned short ws_port = 2001;
        HttpOptions http;
    };

    /// Owns the acceptors and, in realtime mode, the tick clock.
    class NetServer
    {
    public:
        NetServer(asio::io_context &io, ServerCore &core, NetOptions opts)
            : io_(io), core_(core), opts_(std::move(opts)), tcp_acceptor_(io), ws_acceptor_(io), timer_(io)
        {
            open(tcp_acceptor_, opts_.tcp_port);
            open(ws_acceptor_, opts_.ws_port);
            accept_tcp();
            accept_ws();
            if (core_.options().mode == ServerMode::realtime)
            {
                next_ = std::chrono::steady_clock::now();
                schedule();
            }
        }

        unsigned short tcp_port() const { return tcp_acceptor_.local_endpoint().port(); }
        unsigned short ws_port() const { return ws_acceptor_.local_endpoint().port(); }

        void stop()
        {
            beast::error_code ec;
            tcp_acceptor_.close(ec);
            ws_acceptor_.close(ec);
            timer_.cancel();
        }

    private:
        void open(tcp::acceptor &acc, unsigned short port)
        {
            const tcp::endpoint ep(asio::ip::make_address(opts_.address), port);
            acc.open(ep.protocol());
            acc.set_option(asio::socket_base::reuse_address(true));
            acc.bind(ep);
            acc.listen();
        }

        void accept_tcp()
        {
            tcp_acceptor_.async_accept([this](beast::error_code ec, tcp::socket s) {
                if (ec)
                    return;
                s.set_option(tcp::no_delay(true));
                std::make_shared<TcpSession>(std::move(s), core_, registry_)->start();
                accept_tcp();
            });
        }

        void accept_ws()
        {
            ws_acceptor_.async_accept([this](beast::error_code ec, tcp::socket s) {
                if (ec)
                    return;
                std::make_shared<HttpSession>(std::move(s), core_, registry_, opts_.http)->start();
                accept_ws();
            });
        }

        void schedule()
        {
            next_ += std::chrono::duration_cast<std::chrono::steady_clock::duration>(std::chrono::duration<double>(core_.world().dt()));
            timer_.expires_at(next_);
            timer_.async_wait([this](beast::error_code ec) {
                if (ec)
                    return;
                core_.tick();
                registry_.pump_all();
                schedule();
            });
        }

        asio::io_context &io_;
        ServerCore &core_;
        NetOptions opts_;
        tcp::acceptor tcp_acceptor_;
        tcp::acceptor ws_acceptor_;
        asio::steady_timer timer_;
        std::chrono::steady_clock::time_point next_;
        Registry registry_;
    };
} // namespace rail::net
