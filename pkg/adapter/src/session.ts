import { decodeFramePayload } from './pgm.js';
import { Box, TrackerImpl } from './tracker.js';

type State = 'awaiting_init' | 'ready' | 'closed';

export interface Handled {
  /** serialized response line, when one is owed */
  response?: string;
  /** the session is over; the transport should shut down */
  close: boolean;
}

function errorResponse(code: string): Handled {
  return { response: JSON.stringify({ type: 'error', code }), close: true };
}

function isFiniteNumber(v: unknown): v is number {
  return typeof v === 'number' && Number.isFinite(v);
}

function parseBox(v: unknown): Box | null {
  if (!Array.isArray(v) || v.length !== 4 || !v.every(isFiniteNumber)) return null;
  const [x0, y0, x1, y1] = v as number[];
  if (!(x0 < x1 && y0 < y1)) return null;
  return [x0, y0, x1, y1];
}

/**
 * One protocol session: strictly serialized request/response over
 * newline-delimited JSON. Any violation is answered with a typed error and
 * ends the session.
 */
export class AdapterSession {
  private state: State = 'awaiting_init';

  constructor(private readonly tracker: TrackerImpl) {}

  get closed(): boolean {
    return this.state === 'closed';
  }

  handleLine(line: string): Handled {
    if (this.state === 'closed') {
      return { close: true };
    }
    let msg: unknown;
    try {
      msg = JSON.parse(line);
    } catch {
      this.state = 'closed';
      return errorResponse('bad_json');
    }
    if (typeof msg !== 'object' || msg === null || Array.isArray(msg)) {
      this.state = 'closed';
      return errorResponse('bad_request');
    }
    const req = msg as Record<string, unknown>;
    switch (req.type) {
      case 'init':
        return this.handleInit(req);
      case 'frame':
        return this.handleFrame(req);
      case 'close':
        this.state = 'closed';
        return { close: true };
      default:
        this.state = 'closed';
        return errorResponse('bad_type');
    }
  }

  private handleInit(req: Record<string, unknown>): Handled {
    if (this.state !== 'awaiting_init') {
      this.state = 'closed';
      return errorResponse('bad_state');
    }
    const bbox = parseBox(req.bbox);
    if (typeof req.frame !== 'string' || bbox === null) {
      this.state = 'closed';
      return errorResponse('bad_request');
    }
    let frame;
    try {
      frame = decodeFramePayload(req.frame);
    } catch {
      this.state = 'closed';
      return errorResponse('bad_frame');
    }
    this.tracker.init(frame, bbox);
    this.state = 'ready';
    return { response: JSON.stringify({ type: 'ready' }), close: false };
  }

  private handleFrame(req: Record<string, unknown>): Handled {
    if (this.state !== 'ready') {
      this.state = 'closed';
      return errorResponse('bad_state');
    }
    const index = req.index;
    if (typeof index !== 'number' || !Number.isInteger(index) || typeof req.frame !== 'string') {
      this.state = 'closed';
      return errorResponse('bad_request');
    }
    const sc = req.search_center;
    let center: [number, number] | null = null;
    if (sc !== null && sc !== undefined) {
      if (!Array.isArray(sc) || sc.length !== 2 || !sc.every(isFiniteNumber)) {
        this.state = 'closed';
        return errorResponse('bad_request');
      }
      center = [sc[0] as number, sc[1] as number];
    }
    let frame;
    try {
      frame = decodeFramePayload(req.frame);
    } catch {
      this.state = 'closed';
      return errorResponse('bad_frame');
    }
    const result = this.tracker.track(frame, center);
    return {
      response: JSON.stringify({
        type: 'result',
        index,
        bbox: result.bbox,
        score: result.score,
        pmf: result.pmf,
      }),
      close: false,
    };
  }
}
