/** Wire types for the /v1 annotation service. */

export interface WorkItem {
  sample_id: string;
  payload_uri: string | null;
  predicted_class: number;
  predicted_class_name: string;
  alpha: number;
  gain: number;
  class_names: string[];
  lease_seconds_remaining: number;
}

export interface StopInfo {
  stop: boolean;
  max_gain: number;
  total_gain: number;
  positive_gain_count: number;
}

export interface PoolStats {
  total: number;
  counts: {
    unlabeled: number;
    selected: number;
    annotated: number;
    tombstoned: number;
  };
  annotation_fraction: number;
  gain_histogram: number[];
  event_count: number;
}

export interface StatusResponse {
  stats: PoolStats;
  stop: StopInfo;
  class_names: string[];
}

export interface NextBatchOk {
  kind: "items";
  items: WorkItem[];
  stop: StopInfo;
}

export interface NextBatchStopped {
  kind: "stopped";
  stop: StopInfo;
}

export type NextBatchResult = NextBatchOk | NextBatchStopped;

export interface AnnotationAck {
  kind: "ok" | "already_annotated";
  sample_id: string;
  neighbors_rechecked: number;
  stats: PoolStats | null;
  stop: StopInfo | null;
}
