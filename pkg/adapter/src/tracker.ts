import { GrayFrame } from './pgm.js';

export type Box = [number, number, number, number];

export interface ResultBody {
  bbox: Box;
  score: number;
  pmf: { x_tl: number[]; y_tl: number[]; x_br: number[]; y_br: number[] } | null;
}

/**
 * Plug-in point for real trackers. A model-backed implementation loads its
 * weights in the constructor, runs inference in track(), and returns the
 * box with a confidence score plus (when the model head exposes them) the
 * per-coordinate probability distributions.
 */
export interface TrackerImpl {
  init(frame: GrayFrame, bbox: Box): void;
  track(frame: GrayFrame, searchCenter: [number, number] | null): ResultBody;
}

/**
 * Conformance reference: returns an init-sized box centered on the latest
 * search center (or the previous center when none is given), score 1.
 *
 * The arithmetic mirrors the evaluation toolkit's in-process EchoTracker
 * operation for operation, so traces driven through this adapter match it
 * bit for bit: w = x_br - x_tl at init, box = [cx - w/2, cy - h/2,
 * cx + w/2, cy + h/2].
 */
export class EchoTracker implements TrackerImpl {
  private w = 0;
  private h = 0;
  private cx = 0;
  private cy = 0;

  init(_frame: GrayFrame, bbox: Box): void {
    this.w = bbox[2] - bbox[0];
    this.h = bbox[3] - bbox[1];
    this.cx = (bbox[0] + bbox[2]) / 2;
    this.cy = (bbox[1] + bbox[3]) / 2;
  }

  track(_frame: GrayFrame, searchCenter: [number, number] | null): ResultBody {
    if (searchCenter !== null) {
      this.cx = searchCenter[0];
      this.cy = searchCenter[1];
    }
    return {
      bbox: [
        this.cx - this.w / 2,
        this.cy - this.h / 2,
        this.cx + this.w / 2,
        this.cy + this.h / 2,
      ],
      score: 1.0,
      pmf: null,
    };
  }
}
