/**
 * Verdict-cache persistence. The worker keeps decisions in memory and
 * mirrors them here so a terminated worker wakes up warm.
 */

import type { CacheEntry, CacheStore } from "./client-core.js";

export class MemoryCacheStore implements CacheStore {
  private entries = new Map<string, CacheEntry>();

  async load(): Promise<CacheEntry[]> {
    return [...this.entries.values()];
  }

  async put(entry: CacheEntry): Promise<void> {
    this.entries.set(entry.linkId, entry);
  }

  async remove(linkId: string): Promise<void> {
    this.entries.delete(linkId);
  }
}

const DB_NAME = "link-integrity-cache";
const STORE_NAME = "decisions";

/** IndexedDB-backed store for real browser contexts. */
export class IdbCacheStore implements CacheStore {
  private db: Promise<IDBDatabase> | null = null;

  private open(): Promise<IDBDatabase> {
    if (this.db === null) {
      this.db = new Promise((resolve, reject) => {
        const request = indexedDB.open(DB_NAME, 1);
        request.onupgradeneeded = () => {
          request.result.createObjectStore(STORE_NAME, { keyPath: "linkId" });
        };
        request.onsuccess = () => resolve(request.result);
        request.onerror = () => reject(request.error);
      });
    }
    return this.db;
  }

  private async transact<T>(
    mode: IDBTransactionMode,
    run: (store: IDBObjectStore) => IDBRequest<T>,
  ): Promise<T> {
    const db = await this.open();
    return new Promise((resolve, reject) => {
      const request = run(db.transaction(STORE_NAME, mode).objectStore(STORE_NAME));
      request.onsuccess = () => resolve(request.result);
      request.onerror = () => reject(request.error);
    });
  }

  async load(): Promise<CacheEntry[]> {
    try {
      return (await this.transact("readonly", (s) => s.getAll())) as CacheEntry[];
    } catch {
      return []; // storage trouble must never break interception
    }
  }

  async put(entry: CacheEntry): Promise<void> {
    try {
      await this.transact("readwrite", (s) => s.put(entry));
    } catch {
      /* best effort */
    }
  }

  async remove(linkId: string): Promise<void> {
    try {
      await this.transact("readwrite", (s) => s.delete(linkId));
    } catch {
      /* best effort */
    }
  }
}
