"""Length-prefixed binary protocol between the master and its workers.

Frame layout (all little-endian):

    u32 payload_length, u8 kind_tag, payload

Kind tags and payloads:

    1 SetActorWeights   vec            (vec = u32 dim, dim x f32)
    2 SetCriticWeights  vec
    3 EvaluateRequest   u64 seed, f64 a_noise
    4 EvaluateResult    f32 fitness, u32 steps, u32 n_transitions, then per
                        transition f32 runs: state, action, reward, next_state,
                        done (0.0/1.0)
    5 TrainActorRequest vec actor, vec critic, f32 lr, u32 n_grad_steps,
                        u32 batch_size, u32 n_states, n_states*state_dim f32
                        (reply: SetActorWeights with the trained vector)
    6 Shutdown          empty
    7 Heartbeat         empty

An empty-transition EvaluateResult frame is exactly 17 bytes. Transition
runs need the environment dimensions, so a codec is bound to
(state_dim, action_dim); parameter-only messages decode with any codec.

Parameters are float32 on the wire. The in-process evaluator quantizes
through float32 the same way, so a seeded run produces identical logs on
either transport. Channels are serially ordered (one request in flight),
with u64 request ids counted per channel for at-most-once bookkeeping.
"""

import socket
import struct
from dataclasses import dataclass, field

import numpy as np

from . import envs, nets, rl
from .wire import pack_vec, unpack_vec

MAX_PAYLOAD = 1 << 26  # 64 MiB

_HEAD = struct.Struct("<IB")
_EVAL_REQ = struct.Struct("<Qd")  # exploration noise crosses at full precision
_EVAL_RES = struct.Struct("<fII")
_TRAIN_TAIL = struct.Struct("<fIII")


class FramingError(ValueError):
    """Truncated or oversized frame."""


class ProtocolError(ValueError):
    """Well-framed but meaningless bytes (unknown tag, bad payload)."""


class RequestTimeout(TimeoutError):
    """No reply within the deadline; the worker is considered failed."""


@dataclass
class SetActorWeights:
    params: np.ndarray
    TAG = 1


@dataclass
class SetCriticWeights:
    params: np.ndarray
    TAG = 2


@dataclass
class EvaluateRequest:
    seed: int
    a_noise: float
    TAG = 3


@dataclass
class EvaluateResult:
    fitness: float
    steps: int
    transitions: list = field(default_factory=list)
    TAG = 4


@dataclass
class TrainActorRequest:
    actor: np.ndarray
    critic: np.ndarray
    lr: float
    n_grad_steps: int
    batch_size: int
    states: np.ndarray
    TAG = 5


@dataclass
class Shutdown:
    TAG = 6


@dataclass
class Heartbeat:
    TAG = 7


class Codec:
    """Encode/decode messages; transition runs use the bound dimensions."""

    def __init__(self, state_dim: int = 0, action_dim: int = 0):
        self.state_dim = int(state_dim)
        self.action_dim = int(action_dim)

    # -- encoding -------------------------------------------------------------

    def encode(self, msg) -> bytes:
        payload = self._payload(msg)
        if len(payload) > MAX_PAYLOAD:
            raise FramingError("payload of %d bytes exceeds the limit" % len(payload))
        return _HEAD.pack(len(payload), msg.TAG) + payload

    def _payload(self, msg) -> bytes:
        if isinstance(msg, (SetActorWeights, SetCriticWeights)):
            return pack_vec(msg.params)
        if isinstance(msg, EvaluateRequest):
            return _EVAL_REQ.pack(msg.seed, msg.a_noise)
        if isinstance(msg, EvaluateResult):
            head = _EVAL_RES.pack(msg.fitness, msg.steps, len(msg.transitions))
            if not msg.transitions:
                return head
            rows = [np.concatenate([
                np.asarray(t.state, dtype="<f4"),
                np.asarray(t.action, dtype="<f4"),
                np.array([t.reward], dtype="<f4"),
                np.asarray(t.next_state, dtype="<f4"),
                np.array([1.0 if t.done else 0.0], dtype="<f4"),
            ]) for t in msg.transitions]
            return head + np.concatenate(rows).tobytes()
        if isinstance(msg, TrainActorRequest):
            states = np.asarray(msg.states, dtype="<f4")
            return (pack_vec(msg.actor) + pack_vec(msg.critic)
                    + _TRAIN_TAIL.pack(msg.lr, msg.n_grad_steps, msg.batch_size,
                                       states.shape[0])
                    + states.tobytes())
        if isinstance(msg, (Shutdown, Heartbeat)):
            return b""
        raise ProtocolError("cannot encode %r" % (type(msg).__name__,))

    # -- decoding -------------------------------------------------------------

    def decode_payload(self, tag: int, payload: bytes):
        try:
            return self._decode_payload(tag, payload)
        except (struct.error, ValueError) as exc:
            raise ProtocolError("bad payload for tag %d: %s" % (tag, exc)) from exc

    def _decode_payload(self, tag, payload):
        if tag in (SetActorWeights.TAG, SetCriticWeights.TAG):
            params, end = unpack_vec(payload)
            if end != len(payload):
                raise ProtocolError("trailing bytes after parameter vector")
            cls = SetActorWeights if tag == SetActorWeights.TAG else SetCriticWeights
            return cls(params=params)
        if tag == EvaluateRequest.TAG:
            seed, a_noise = _EVAL_REQ.unpack(payload)
            return EvaluateRequest(seed=seed, a_noise=float(a_noise))
        if tag == EvaluateResult.TAG:
            fitness, steps, n_tr = _EVAL_RES.unpack_from(payload, 0)
            row = 2 * self.state_dim + self.action_dim + 2
            data = np.frombuffer(payload, dtype="<f4", offset=_EVAL_RES.size)
            if n_tr and (self.state_dim == 0 or data.size != n_tr * row):
                raise ProtocolError("transition block does not match the bound dims")
            transitions = []
            s, a = self.state_dim, self.action_dim
            for i in range(n_tr):
                r = data[i * row:(i + 1) * row]
                transitions.append(envs.Transition(
                    state=r[:s].copy(), action=r[s:s + a].copy(),
                    reward=float(r[s + a]), next_state=r[s + a + 1:s + a + 1 + s].copy(),
                    done=bool(r[-1] > 0.5)))
            return EvaluateResult(fitness=float(fitness), steps=int(steps),
                                  transitions=transitions)
        if tag == TrainActorRequest.TAG:
            actor, off = unpack_vec(payload)
            critic, off = unpack_vec(payload, off)
            lr, n_steps, batch, n_states = _TRAIN_TAIL.unpack_from(payload, off)
            off += _TRAIN_TAIL.size
            states = np.frombuffer(payload, dtype="<f4", offset=off)
            if self.state_dim == 0 or states.size != n_states * self.state_dim:
                raise ProtocolError("state block does not match the bound dims")
            return TrainActorRequest(actor=actor, critic=critic, lr=float(lr),
                                     n_grad_steps=int(n_steps), batch_size=int(batch),
                                     states=states.reshape(n_states, self.state_dim).copy())
        if tag == Shutdown.TAG:
            if payload:
                raise ProtocolError("shutdown carries no payload")
            return Shutdown()
        if tag == Heartbeat.TAG:
            if payload:
                raise ProtocolError("heartbeat carries no payload")
            return Heartbeat()
        raise ProtocolError("unknown message tag %d" % tag)

    def decode_frame(self, buf: bytes):
        """Decode one complete frame; returns (message, bytes consumed)."""
        if len(buf) < _HEAD.size:
            raise FramingError("buffer shorter than the frame header")
        length, tag = _HEAD.unpack_from(buf, 0)
        if length > MAX_PAYLOAD:
            raise FramingError("declared payload of %d bytes exceeds the limit" % length)
        end = _HEAD.size + length
        if len(buf) < end:
            raise FramingError("frame declares %d payload bytes, buffer has %d"
                               % (length, len(buf) - _HEAD.size))
        return self.decode_payload(tag, buf[_HEAD.size:end]), end


class FrameDecoder:
    """Incremental decoder: feed arbitrary byte chunks, get whole messages.

    Message boundaries survive any split of the stream; partial frames
    stay buffered until completed.
    """

    def __init__(self, codec: Codec):
        self.codec = codec
        self._buf = bytearray()

    def feed(self, data: bytes):
        self._buf.extend(data)
        out = []
        while True:
            if len(self._buf) < _HEAD.size:
                break
            length, _tag = _HEAD.unpack_from(self._buf, 0)
            if length > MAX_PAYLOAD:
                raise FramingError("declared payload of %d bytes exceeds the limit"
                                   % length)
            end = _HEAD.size + length
            if len(self._buf) < end:
                break
            msg, consumed = self.codec.decode_frame(bytes(self._buf[:end]))
            del self._buf[:consumed]
            out.append(msg)
        return out

    @property
    def pending_bytes(self) -> int:
        return len(self._buf)


class Channel:
    """Master-side endpoint: serially ordered request/reply over a socket."""

    def __init__(self, sock: socket.socket, codec: Codec):
        self.sock = sock
        self.codec = codec
        self.decoder = FrameDecoder(codec)
        self.next_request_id = 0  # u64, counted per channel
        self.failed = False

    def send(self, msg):
        self.sock.sendall(self.codec.encode(msg))

    def request(self, msg, timeout: float = 30.0):
        if self.failed:
            raise RequestTimeout("channel already marked failed")
        request_id = self.next_request_id
        self.next_request_id += 1
        self.send(msg)
        self.sock.settimeout(timeout)
        try:
            while True:
                chunk = self.sock.recv(65536)
                if not chunk:
                    self.failed = True
                    raise RequestTimeout("connection closed awaiting reply %d" % request_id)
                msgs = self.decoder.feed(chunk)
                if msgs:
                    if len(msgs) > 1:
                        raise ProtocolError("unexpected pipelined replies")
                    return msgs[0]
        except socket.timeout:
            self.failed = True
            raise RequestTimeout("no reply to request %d within %.1fs"
                                 % (request_id, timeout)) from None

    def close(self):
        try:
            self.sock.close()
        except OSError:
            pass


class WorkerServer:
    """Serves one master connection: evaluate and train on request."""

    def __init__(self, objective, actor_spec: nets.MlpSpec | None):
        self.objective = objective
        self.actor_spec = actor_spec
        if objective.episodic:
            self.codec = Codec(objective.state_dim, objective.action_dim)
        else:
            self.codec = Codec()
        self.actor = None

    def handle(self, msg):
        """Returns the reply message, or None to close the connection."""
        if isinstance(msg, Heartbeat):
            return Heartbeat()
        if isinstance(msg, Shutdown):
            return None
        if isinstance(msg, SetActorWeights):
            self.actor = msg.params
            return Heartbeat()
        if isinstance(msg, SetCriticWeights):
            return Heartbeat()
        if isinstance(msg, EvaluateRequest):
            return self._evaluate(msg)
        if isinstance(msg, TrainActorRequest):
            return self._train_actor(msg)
        raise ProtocolError("worker cannot handle %r" % (type(msg).__name__,))

    def _evaluate(self, msg: EvaluateRequest) -> EvaluateResult:
        if self.actor is None:
            raise ProtocolError("evaluate before SetActorWeights")
        params = np.asarray(self.actor, dtype=np.float64)
        if not self.objective.episodic:
            fitness = self.objective.fitness(params)
            return EvaluateResult(fitness=float(np.float32(fitness)), steps=1)
        rng = np.random.default_rng(msg.seed)
        res = envs.evaluate(params, self.actor_spec, self.objective, msg.a_noise, rng)
        return EvaluateResult(fitness=float(np.float32(res.total_reward)),
                              steps=res.steps, transitions=res.transitions)

    def _train_actor(self, msg: TrainActorRequest) -> SetActorWeights:
        critic = nets.critic_spec(self.objective.state_dim, self.objective.action_dim,
                                  tuple(self.actor_spec.layer_sizes[1:-1]))
        params = np.asarray(msg.actor, dtype=np.float64)
        critic_params = np.asarray(msg.critic, dtype=np.float64)
        states = np.asarray(msg.states, dtype=np.float64)
        for k in range(msg.n_grad_steps):
            batch = states[k * msg.batch_size:(k + 1) * msg.batch_size]
            if batch.shape[0] == 0:
                break
            grad = rl.actor_objective_grad(params, self.actor_spec, critic_params,
                                           critic, batch)
            params = params + msg.lr * grad  # plain ascent on the wire op
        return SetActorWeights(params=params.astype(np.float32))

    def serve_connection(self, conn: socket.socket):
        decoder = FrameDecoder(self.codec)
        try:
            while True:
                chunk = conn.recv(65536)
                if not chunk:
                    return
                for msg in decoder.feed(chunk):
                    reply = self.handle(msg)
                    if reply is None:
                        return
                    conn.sendall(self.codec.encode(reply))
        finally:
            conn.close()


def start_worker_thread(objective, actor_spec):
    """Listen on an ephemeral loopback port and serve one master connection.

    Returns (port, thread); the thread exits after the master shuts the
    worker down or disconnects.
    """
    import threading

    server = WorkerServer(objective, actor_spec)
    listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    listener.bind(("127.0.0.1", 0))
    listener.listen(1)
    port = listener.getsockname()[1]

    def run():
        conn, _ = listener.accept()
        listener.close()
        server.serve_connection(conn)

    thread = threading.Thread(target=run, daemon=True)
    thread.start()
    return port, thread


def connect_channel(port: int, codec: Codec, timeout: float = 10.0) -> Channel:
    sock = socket.create_connection(("127.0.0.1", port), timeout=timeout)
    sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
    return Channel(sock, codec)


class SocketEvaluator:
    """Engine-facing evaluator that sends work over a channel.

    Weights cross the wire as float32, so results match the in-process
    evaluator running in float32 mode bit for bit.
    """

    def __init__(self, channel: Channel, timeout: float = 60.0):
        self.channel = channel
        self.timeout = timeout

    def evaluate(self, params, seed: int, a_noise: float) -> envs.EvalResult:
        ack = self.channel.request(SetActorWeights(np.asarray(params, dtype=np.float32)),
                                   self.timeout)
        if not isinstance(ack, Heartbeat):
            raise ProtocolError("expected weight ack, got %r" % (type(ack).__name__,))
        rep = self.channel.request(EvaluateRequest(seed=seed, a_noise=a_noise),
                                   self.timeout)
        if not isinstance(rep, EvaluateResult):
            raise ProtocolError("expected EvaluateResult, got %r" % (type(rep).__name__,))
        return envs.EvalResult(total_reward=rep.fitness, steps=rep.steps,
                               transitions=rep.transitions)

    def close(self):
        try:
            self.channel.send(Shutdown())
        except OSError:
            pass
        self.channel.close()


def socket_evaluators(cfg, objective, actor_spec, n: int):
    """Spin up n loopback worker threads and return their evaluators."""
    evaluators = []
    codec = (Codec(objective.state_dim, objective.action_dim)
             if objective.episodic else Codec())
    for _ in range(n):
        port, _thread = start_worker_thread(objective, actor_spec)
        evaluators.append(SocketEvaluator(connect_channel(port, codec)))
    return evaluators
