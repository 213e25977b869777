// Reviewer flow: walk the items, post decisions, track progress and
// conflicts. The DOM layer renders from this model's state.
export class ReviewerModel {
    constructor(api, onChange) {
        this.api = api;
        this.onChange = onChange;
        this.state = {
            count: 0,
            decided: 0,
            index: 0,
            current: null,
            conflict: null,
            finished: false,
            error: null,
        };
    }
    update(patch) {
        this.state = { ...this.state, ...patch };
        this.onChange?.(this.state);
    }
    async load() {
        const counts = await this.api.count();
        this.update({
            count: counts.count,
            decided: counts.decided,
            finished: counts.count === 0 || counts.decided >= counts.count,
        });
        if (!this.state.finished) {
            await this.goTo(await this.firstUndecided());
        }
    }
    async firstUndecided() {
        for (let index = 0; index < this.state.count; index += 1) {
            const item = await this.api.item(index);
            if (!item.decision) {
                return index;
            }
        }
        return 0;
    }
    async goTo(index) {
        if (index < 0 || index >= this.state.count) {
            return;
        }
        const item = await this.api.item(index);
        this.update({ index, current: item, conflict: null });
    }
    async decide(decision) {
        const result = await this.api.decide(this.state.index, decision);
        if (!result.ok) {
            this.update({ conflict: result.error });
            return result;
        }
        const decided = result.decided;
        if (decided >= this.state.count) {
            this.update({ decided, finished: true, conflict: null });
            return result;
        }
        this.update({ decided, conflict: null });
        await this.advance();
        return result;
    }
    async advance() {
        for (let step = 1; step <= this.state.count; step += 1) {
            const candidate = (this.state.index + step) % this.state.count;
            const item = await this.api.item(candidate);
            if (!item.decision) {
                this.update({ index: candidate, current: item });
                return;
            }
        }
        this.update({ finished: true });
    }
    async decideAll(decision) {
        await this.load();
        while (!this.state.finished) {
            const result = await this.decide(decision);
            if (!result.ok) {
                await this.advance();
            }
        }
    }
}
