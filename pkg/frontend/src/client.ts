/** HTTP + websocket client for the session service.
 *
 * Both transports are injectable so the same client runs in a browser
 * (window.fetch, native WebSocket) and under node tests (undici fetch,
 * the ws package). Server errors arrive as ErrorEnvelope JSON and are
 * rethrown as ApiError with the machine-readable code preserved.
 */

import {
  parseErrorEnvelope,
  parseRankingResult,
  parseResultsSummary,
  parseSessionInfo,
  parseStreamMessage,
  parseTrialInfo,
  WIRE_VERSION,
} from "./protocol.js";
import type {
  ErrorCode,
  FramePacket,
  PhaseMessage,
  RankingResult,
  ResultsSummary,
  SessionInfo,
  TrialInfo,
} from "./protocol.js";

export class ApiError extends Error {
  constructor(
    readonly code: ErrorCode,
    message: string,
    readonly status: number,
  ) {
    super(`${code}: ${message}`);
    this.name = "ApiError";
  }
}

/** The slice of the WebSocket API the client needs; both the browser class
 * and the ws package satisfy it. */
export interface StreamSocket {
  onmessage: ((ev: { data: unknown }) => void) | null;
  onclose: ((ev: unknown) => void) | null;
  onerror: ((ev: unknown) => void) | null;
  close(): void;
}

export type SocketFactory = (url: string) => StreamSocket;

export interface ClientOptions {
  fetchImpl?: typeof fetch;
  socketFactory: SocketFactory;
}

export interface StreamOutcome {
  frames: FramePacket[];
  final: PhaseMessage;
}

/** What the session controller needs from a client; ApiClient is the real
 * implementation, tests substitute canned ones. */
export interface SessionApi {
  createSession(participant?: number): Promise<SessionInfo>;
  sessionInfo(sessionId: string): Promise<SessionInfo>;
  nextTrial(sessionId: string): Promise<TrialInfo>;
  submitRanking(sessionId: string, ranking: string[]): Promise<RankingResult>;
  results(sessionId: string): Promise<ResultsSummary>;
  stream(sessionId: string, onFrame?: (packet: FramePacket) => void): Promise<StreamOutcome>;
}

export class ApiClient implements SessionApi {
  private readonly base: string;
  private readonly wsBase: string;
  private readonly fetchImpl: typeof fetch;
  private readonly socketFactory: SocketFactory;

  constructor(baseUrl: string, options: ClientOptions) {
    this.base = baseUrl.replace(/\/$/, "");
    this.wsBase = this.base.replace(/^http/, "ws");
    this.fetchImpl = options.fetchImpl ?? fetch;
    this.socketFactory = options.socketFactory;
  }

  private async request(method: string, path: string, body?: unknown): Promise<unknown> {
    const res = await this.fetchImpl(`${this.base}${path}`, {
      method,
      headers: body === undefined ? undefined : { "content-type": "application/json" },
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    const text = await res.text();
    const data: unknown = text ? JSON.parse(text) : null;
    if (!res.ok) {
      const env = parseErrorEnvelope(data);
      throw new ApiError(env.code, env.message, res.status);
    }
    return data;
  }

  async createSession(participant?: number): Promise<SessionInfo> {
    const body = { v: WIRE_VERSION, participant: participant ?? null };
    return parseSessionInfo(await this.request("POST", "/sessions", body));
  }

  async sessionInfo(sessionId: string): Promise<SessionInfo> {
    return parseSessionInfo(await this.request("GET", `/sessions/${sessionId}`));
  }

  async nextTrial(sessionId: string): Promise<TrialInfo> {
    return parseTrialInfo(await this.request("POST", `/sessions/${sessionId}/trials/next`));
  }

  async submitRanking(sessionId: string, ranking: string[]): Promise<RankingResult> {
    const body = { v: WIRE_VERSION, ranking };
    return parseRankingResult(await this.request("POST", `/sessions/${sessionId}/ranking`, body));
  }

  async results(sessionId: string): Promise<ResultsSummary> {
    return parseResultsSummary(await this.request("GET", `/sessions/${sessionId}/results`));
  }

  /** Consume the trial stream until the server announces the next phase.
   *
   * onFrame fires once per frame packet in arrival order. The promise
   * resolves with all frames once the closing PhaseMessage arrives, and
   * rejects if the socket errors, closes early, or sends an error envelope.
   */
  stream(sessionId: string, onFrame?: (packet: FramePacket) => void): Promise<StreamOutcome> {
    const socket = this.socketFactory(`${this.wsBase}/sessions/${sessionId}/stream`);
    return new Promise<StreamOutcome>((resolve, reject) => {
      const frames: FramePacket[] = [];
      let settled = false;
      const fail = (err: unknown) => {
        if (settled) return;
        settled = true;
        try {
          socket.close();
        } catch {
          // already closed
        }
        reject(err instanceof Error ? err : new Error(String(err)));
      };
      socket.onerror = (ev) => fail(ev);
      socket.onclose = () => {
        if (!settled) fail(new Error("stream closed before the phase message"));
      };
      socket.onmessage = (ev) => {
        if (settled) return;
        const raw = typeof ev.data === "string" ? ev.data : String(ev.data);
        let parsed: FramePacket | PhaseMessage;
        try {
          // an error envelope means the stream was refused; surface its code
          const data: unknown = JSON.parse(raw);
          if (typeof data === "object" && data !== null && "code" in data) {
            const env = parseErrorEnvelope(data);
            fail(new ApiError(env.code, env.message, 0));
            return;
          }
          parsed = parseStreamMessage(raw);
        } catch (err) {
          fail(err);
          return;
        }
        if (parsed.type === "frame") {
          frames.push(parsed);
          onFrame?.(parsed);
        } else {
          settled = true;
          socket.onclose = null;
          resolve({ frames, final: parsed });
        }
      };
    });
  }
}
